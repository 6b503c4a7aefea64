#pragma once

#include <string>
#include <vector>

#include "ct/gradcheck.hpp"

namespace ct {

struct SuiteResult {
    std::string name;
    std::string dtype;  // float32 | float64
    double tolerance = 0;
    GradCheckReport report;
    bool pass = false;
};

// Every differentiable primitive plus both backbones end-to-end, each checked
// in float32 (against a float64 oracle, tolerance 1e-3) and in float64
// (tolerance 1e-5). `corrupt_name`, when non-empty, appends a fixture whose
// backward rule is deliberately wrong; it must fail, which exercises the
// harness's ability to catch a broken gradient.
std::vector<SuiteResult> run_gradcheck_suite(const std::string& corrupt_name = "");

bool suite_passed(const std::vector<SuiteResult>& results);
std::string suite_summary(const std::vector<SuiteResult>& results);

}  // namespace ct
