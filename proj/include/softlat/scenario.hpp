#pragma once

#include "softlat/manipulation.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace softlat {

/// One experiment description, loaded from a JSON scenario file. The `kind`
/// selects the pipeline; kind-specific knobs live in `config`.
struct Scenario {
    std::string id;
    std::string kind;  // locomotion | timing | turning | attachment_sweep |
                       // assembly | manipulation
    std::uint32_t seed = 0;
    std::string config_text;  // canonical JSON of the kind-specific config

    static Scenario load_file(const std::string& path);
    static Scenario load_text(const std::string& text);
};

struct RunOptions {
    std::string out_dir;  // artifacts are skipped when empty
    std::optional<std::uint32_t> seed_override;
    /// "key=value" pairs applied onto the scenario config (dotted keys
    /// address nested objects; values parsed as JSON, falling back to string).
    std::vector<std::string> config_overrides;
    bool render_frames = false;  // write SVG frames alongside the CSVs
};

struct ExperimentReport {
    std::string scenario_id;
    std::string kind;
    bool success = false;
    std::string failure;  // diagnostic when success is false
    std::map<std::string, double> metrics;
    std::map<std::string, std::string> notes;  // non-numeric outcomes
    std::uint32_t seed = 0;
    std::string config_hash;  // stable across reruns of the same config+seed

    std::string to_json() const;
};

/// Executes one scenario end-to-end; artifacts (report.json, trajectory.csv,
/// per-kind extras, optional SVG frames) land in opts.out_dir.
ExperimentReport run_scenario(const Scenario& scenario, const RunOptions& opts = {});
ExperimentReport run_scenario_file(const std::string& path, const RunOptions& opts = {});

/// The bundled experiment set replicating the paper's figures and tables.
std::vector<Scenario> bundled_scenarios();

/// Runs every bundled scenario (failures are reported, the run continues) and
/// writes a summary table plus per-scenario artifact directories under
/// opts.out_dir. Returns the reports in bundled order.
std::vector<ExperimentReport> replicate_all(const RunOptions& opts = {});

/// Comparison table (fixed-width text) for a replicate_all result set.
std::string summary_table(const std::vector<ExperimentReport>& reports);

// ---------------------------------------------------------------------------
// Artifacts

/// Trajectory CSV contract: header "t,module_id,node,x,y,z", one row per node
/// per sample, fixed formatting so equal runs are byte-identical.
class TrajectoryWriter {
  public:
    explicit TrajectoryWriter(const std::string& path);
    ~TrajectoryWriter();
    void sample(double t, const std::vector<ModuleState>& modules);
    void sample(double t, const LatticeState& lattice);

  private:
    struct Impl;
    Impl* impl_;
};

/// Ball trajectory CSV: header "t,ball,x,y,z,node".
std::string ball_trajectory_csv(const std::vector<std::vector<BallTrace>>& traces);

/// Orthographic SVG frame (top view x/y beside front view x/z). The generic
/// form takes labelled point groups (one group per module, nodes joined by a
/// polyline); the module overload draws the actual skeleton edges. Balls are
/// filled circles.
std::string render_svg_frame(
    const std::vector<std::pair<std::string, std::vector<Vec3>>>& point_groups,
    const std::vector<Vec3>& balls = {});
std::string render_svg_frame(const std::vector<ModuleState>& modules,
                             const std::vector<Vec3>& balls = {});

/// Renders frame_%05d.svg files under `out_dir` from a trajectory CSV written
/// by TrajectoryWriter, one frame per distinct time stamp, subsampled by
/// `stride`. Returns the number of frames written.
int render_trajectory_csv(const std::string& csv_path, const std::string& out_dir,
                          int stride = 1);

}  // namespace softlat
