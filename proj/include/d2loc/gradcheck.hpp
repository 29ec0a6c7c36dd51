#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "d2loc/autodiff.hpp"

namespace d2loc::gradcheck {

struct GradCheckConfig {
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    std::size_t coords_per_component = 20;
    double fd_step = 1e-5;
    double tolerance_composite = 1e-4;
    double tolerance_elementwise = 1e-6;
    // Test hook: scales the named component's analytic gradient so the
    // comparison must fail; verifies that failures are reported by name.
    std::string sabotage;
};

struct GradCheckEntry {
    std::string component;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

// A differentiable scalar with the leaves it is differentiated against.
// build() reconstructs the graph from the leaves' current values, which is
// what central differences perturb.
struct ComponentFixture {
    std::vector<nd::Array> leaves;
    std::function<nd::Array()> build;
    double tolerance = 1e-4;
};

std::vector<std::string> component_names();
ComponentFixture make_component(const std::string& name, std::uint64_t seed,
                                const GradCheckConfig& cfg);

// Central-difference check of one fixture at `coords` random coordinates.
double max_relative_error(ComponentFixture& fixture, std::uint64_t seed, std::size_t coords,
                          double fd_step, bool sabotage);

std::vector<GradCheckEntry> run_gradcheck(const GradCheckConfig& cfg);

}  // namespace d2loc::gradcheck
