#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace enviro::checks {

// One verification suite's outcome. `detail` is a single diagnostic line
// (the failing quantity, or what a reduced profile covered).
struct SuiteResult {
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
};

struct CheckOptions {
    std::uint64_t seed = 1;
    // Artifact directory: training outputs land here and are reused across
    // runs when still valid.
    std::string work_dir = "enviro_check_work";
    // Full profile runs the desk-scale training criteria; the default smoke
    // profile replaces them with a reduced pipeline-health pass.
    bool full = false;
    // Path to the command-line binary, needed by the determinism suite.
    std::string cli_path;
    // Run only the named suite ("" = all).
    std::string only;
    // Fault injection: scales the Euler increment inside the ode suite.
    double euler_dt_scale = 1.0;
};

// The eight suites, named for what they verify.
inline const std::vector<std::string>& suite_names() {
    static const std::vector<std::string> names = {
        "dsp", "snr_adaptation", "mixing", "cfm_objective",
        "dcfg", "ode",           "desk_e2e", "determinism"};
    return names;
}

// Runs the requested suites (progress notes go to `log`), returning results
// in the canonical suite order.
std::vector<SuiteResult> run_checks(const CheckOptions& opts, std::ostream& log);

// Prints one line per suite plus a summary; returns the process exit code
// (0 all passed, 1 otherwise).
int print_report(const std::vector<SuiteResult>& results, std::ostream& out);

}  // namespace enviro::checks
