#pragma once

#include <string>
#include <vector>

namespace moss {

/// One parsed run directory (manifest + summary + round records).
struct LoadedRun {
    std::string dir;
    std::string tag;
    std::vector<std::string> tiers;                       // stable order
    std::vector<std::string> converged;                   // per tier; "-" when never
    std::vector<double> final_accuracy;                   // per tier
    double cumulative_mb = 0.0;
    std::vector<std::vector<double>> accuracy_curves;     // per tier, per round
};

LoadedRun load_run_dir(const std::string& dir);

/// CSV: one row per run; columns are
/// run,method,conv_round_<tier>...,final_acc_<tier>...,cumulative_mb with the
/// tier column set being the ordered union across runs.
std::string comparison_csv(const std::vector<LoadedRun>& runs);

/// Human-readable fixed-width rendering of the same table.
std::string comparison_table(const std::vector<LoadedRun>& runs);

/// Accuracy-vs-round curves for every run:tier as a standalone SVG.
std::string accuracy_svg(const std::vector<LoadedRun>& runs);

}  // namespace moss
