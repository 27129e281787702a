#pragma once

#include "softlat/contact.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace softlat {

/// One spherical magnet: a node of one module plus its phase in the module's
/// head-to-tail polarity loop.
struct MagnetSite {
    NodeRef node;
    int polarity = 0;  // phase index 0..2 around the loop
    LoopOrientation orientation = LoopOrientation::ccw;
};

enum class BondState { partial_set, full };

/// A magnet pair held coincident. `full` once the owning module pair shares a
/// complete four-magnet face bond (two feet + two arms).
struct Bond {
    NodeRef a;
    NodeRef b;
    double formation_time = 0;  // s
    BondState state = BondState::partial_set;
};

/// A collection of modules plus the bond graph between their magnet sites.
struct LatticeState {
    std::vector<ModuleState> modules;
    std::vector<Bond> bonds;

    int module_index(const std::string& module_id) const;  // -1 if absent

    /// Magnet sites of every module, in (module, site) order.
    std::vector<MagnetSite> magnet_sites() const;

    /// Base constraints (feet on the ground) plus one coincidence constraint
    /// per bond.
    ConstraintSet constraints() const;

    bool bonded(const NodeRef& a, const NodeRef& b) const;

    /// True when `a` and `b` are held coincident through the bond graph
    /// (directly or through a chain of bonds).
    bool same_cluster(const NodeRef& a, const NodeRef& b) const;

    void validate() const;  // throws Error("invariant") on dangling bond refs
};

/// True iff the two sites can attach: distinct modules whose polarity loops
/// run the same way (head-to-tail alignment achievable from any direction).
/// Throws Error("invariant") for sites on the same module.
bool bond_compatible(const MagnetSite& a, const MagnetSite& b);

struct DetectBondsOptions {
    double capture_radius = 0.004;  // m
    double time = 0;                // formation time stamp for new bonds
    /// Sites listed here are ineligible for new bonds (used to block top
    /// magnets while the passive module leans away).
    std::vector<NodeRef> blocked_sites;
};

/// Forms bonds between compatible site pairs within the capture radius.
/// Pairs already connected through the coincidence graph are skipped, so the
/// operation is idempotent and never emits redundant constraints for magnet
/// clusters. Returns only the newly formed bonds; `lattice.bonds` is extended
/// and bond states are refreshed.
std::vector<Bond> detect_bonds(LatticeState& lattice, const DetectBondsOptions& opts = {});

/// A junction where bonded module arms meet. Junctions with at least three
/// arms are the load-bearing "top nodes" of an assembled lattice.
struct TopNode {
    Vec3 position = Vec3::Zero();   // mean of the member arm positions
    std::vector<NodeRef> arms;      // arm nodes merged here
};

struct TopNodeGraph {
    std::vector<TopNode> nodes;
    std::vector<std::pair<int, int>> edges;  // indices into `nodes`

    bool connected() const;
};

/// Clusters bonded arm tips; keeps clusters with >= 3 arms as top nodes.
/// Two top nodes share an edge when at least two distinct modules have arms
/// in both clusters (the two skeleton faces flanking the connecting valley).
TopNodeGraph top_node_graph(const LatticeState& lattice);

// ---------------------------------------------------------------------------
// Builders

/// One module standing at a pose.
LatticeState single_module_lattice(ModuleSpecPtr spec, const RigidTransform& pose,
                                   const std::string& module_id = "m0");

/// Three modules fanned around a shared centre vertex (half hexagon): the
/// centre feet/arms bond into the strapped clusters of the paper's walking
/// unit, leaving one free outer foot on each side module. Module ids are
/// "<prefix>R", "<prefix>M", "<prefix>L" (right, middle, left of the forward
/// direction). The unit is already bonded and at equilibrium when returned.
LatticeState build_unit(ModuleSpecPtr spec, const RigidTransform& pose,
                        const std::string& id_prefix = "");

/// Row lattice with three top nodes in a line (two allowed edges): a full
/// six-module rosette around the middle node plus two-module extensions
/// giving each end node four arms. Ten modules in total, bonded, settled.
LatticeState build_row_lattice(ModuleSpecPtr spec);

/// Lattice whose top nodes form a 3x3 grid (triangular-lattice rhombus):
/// every triangle of the tiling incident to one of the nine grid vertices is
/// occupied by a module, so all nine junctions carry at least three arms.
LatticeState build_grid_lattice(ModuleSpecPtr spec);

/// Appends a three-module unit to the lattice, placed so that its leading rim
/// edge faces the segment (edge_a, edge_b) of the existing structure from a
/// clearance `gap` along the `outward` direction, with an optional heading
/// offset about the unit centre. Returns the indices of the new modules.
std::vector<int> place_unit_for_docking(LatticeState& lattice, ModuleSpecPtr spec,
                                        const Vec3& edge_a, const Vec3& edge_b,
                                        const Vec3& outward, double gap, double offset_deg,
                                        const std::string& id_prefix);

// ---------------------------------------------------------------------------
// Attachment protocols

struct AttachmentParams {
    double capture_radius = 0.004;    // m
    double mu = 0.3;
    double approach_gap = 0.012;      // m, initial clearance between facing feet
    int max_cycles_per_approach = 14; // combined-gait cycles before giving up
    int max_approaches = 2;
    double noise_position = 0.002;    // m, per-approach-cycle uniform noise
    double noise_heading_deg = 3.0;   // deg
    double lean_block_threshold = 0.5;  // top sites blocked while lean >= this
    ModuleSpecPtr spec;               // defaults to calibrated locomotion spec
};

struct AttachmentReport {
    bool success = false;
    int approaches = 0;
    int cycles = 0;
    std::vector<Bond> bond_sequence;  // in formation order
    std::string detail;
};

/// Serializes a report as a small structured text document.
std::string serialize_attachment_report(const AttachmentReport& report);

/// Places an active and a passive module facing each other, the passive
/// rotated by the alignment angle, and runs the single-module protocol:
/// passive leans outward (top magnets blocked), active advances with the
/// combined gait, everything releases on the first bottom bond, then the
/// corrective contraction (four neighbouring verticals, two front
/// horizontals) and up to one extra approach finish the four-magnet bond.
AttachmentReport run_attachment_protocol(LatticeState& lattice, int active_index,
                                         int passive_index, double alignment_angle_deg,
                                         std::uint32_t seed,
                                         const AttachmentParams& params);

/// Convenience: builds the two-module scene and runs the protocol.
AttachmentReport run_attachment_protocol(double alignment_angle_deg, std::uint32_t seed,
                                         const AttachmentParams& params = {});

struct UnitAttachmentParams {
    double capture_radius = 0.004;  // m
    double mu = 0.3;
    int max_cycles = 12;            // walking cycles before giving up
    int max_pivot_steps = 24;
    double pivot_step_rad = 0.03;
    double approach_offset_deg = 0; // heading offset of the approaching unit
    ModuleSpecPtr spec;
};

/// Drives a three-module unit (module indices `unit_modules`) toward the rest
/// of the lattice with the three-legged-race gait; the passive side waits
/// motionless. On partial connection the unit pivots rigidly about the bonded
/// points until the remaining magnet pairs capture.
AttachmentReport run_unit_attachment(LatticeState& lattice,
                                     const std::vector<int>& unit_modules,
                                     std::uint32_t seed,
                                     const UnitAttachmentParams& params);

}  // namespace softlat
