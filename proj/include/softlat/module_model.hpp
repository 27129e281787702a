#pragma once

#include "softlat/types.hpp"

#include <memory>
#include <string>
#include <vector>

namespace softlat {

enum class NodeRole { foot, arm, center };

enum class LoopOrientation { cw, ccw };

struct NodeTemplate {
    std::string label;
    Vec3 position = Vec3::Zero();  // meters, module frame
    NodeRole role = NodeRole::center;
};

/// One SMA coil channel. One-way: slack below its current rest length.
struct SmaChannelSpec {
    std::string label;           // VA, DB, HAB, ...
    std::string node_a;
    std::string node_b;
    double stiffness = 0;        // N/m
    double rest_martensite = 0;  // m, cool
    double rest_austenite = 0;   // m, fully actuated

    /// Rest length at activation level a in [0,1].
    double rest_length(double a) const {
        return rest_martensite + a * (rest_austenite - rest_martensite);
    }
};

/// Passive printed-skeleton strut, modeled as a stiff two-way spring.
struct SkeletonEdge {
    std::string node_a;
    std::string node_b;
    double stiffness = 0;    // N/m
    double rest_length = 0;  // m
};

struct MagnetSiteSpec {
    std::string node;    // node label carrying the spherical magnet
    int polarity = 0;    // phase index 0..2 around the loop
};

struct ModuleSpec {
    std::string name = "module";
    int schema_version = 1;
    std::vector<NodeTemplate> node_templates;
    std::vector<SkeletonEdge> skeleton_edges;
    std::vector<SmaChannelSpec> sma_channels;
    std::vector<MagnetSiteSpec> magnet_sites;
    double node_mass = 0;  // kg per node
    LoopOrientation magnet_loop = LoopOrientation::ccw;

    int node_index(const std::string& label) const;          // -1 if absent
    const NodeTemplate& node(const std::string& label) const;
    int channel_index(const std::string& label) const;       // case-insensitive, -1 if absent
    double total_mass() const { return node_mass * static_cast<double>(node_templates.size()); }
};

using ModuleSpecPtr = std::shared_ptr<const ModuleSpec>;

/// Current node positions of one module instance.
struct ModuleState {
    ModuleSpecPtr spec;
    std::string module_id;
    std::vector<Vec3> node_positions;

    Vec3 center_of_mass() const;
};

/// Per-half-cycle slide bookkeeping: h3 = h1 - h2 by construction.
struct StepMetrics {
    double h1 = 0;  // forward slide (m)
    double h2 = 0;  // backward slide (m)
    double h3 = 0;  // net displacement (m)
};

/// Parses and validates a module descriptor document (JSON text).
ModuleSpec load_module_spec(const std::string& descriptor_text);

/// Deterministic serialization; load(serialize(s)) == s.
std::string serialize_module_spec(const ModuleSpec& spec);

/// The bundled default module: stacked-tetrahedron skeleton, 9 SMA channels,
/// rest lengths pre-compensated so the template pose is a gravity equilibrium.
ModuleSpecPtr default_module_spec();

/// Same geometry with explicit stiffness/mass parameters (calibration knobs).
ModuleSpecPtr make_module_spec(double skeleton_stiffness, double sma_stiffness, double node_mass);

/// Instantiates a module at the given base pose (template positions transformed).
ModuleState build_module(ModuleSpecPtr spec, const RigidTransform& pose,
                         const std::string& module_id = "m0");

/// Channel lookup by label, case-insensitive. Throws on unknown label.
const SmaChannelSpec& channel(const ModuleSpec& spec, const std::string& label);

/// Validates all spec invariants; throws Error("invariant", ...) naming the violation.
void validate_module_spec(const ModuleSpec& spec);

}  // namespace softlat
