#include "softlat/module_model.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

using json = nlohmann::ordered_json;

namespace softlat {

namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

NodeRole role_from_string(const std::string& s) {
    if (s == "foot") return NodeRole::foot;
    if (s == "arm") return NodeRole::arm;
    if (s == "center") return NodeRole::center;
    throw Error("parse", "unknown node role '" + s + "'");
}

const char* role_to_string(NodeRole r) {
    switch (r) {
        case NodeRole::foot: return "foot";
        case NodeRole::arm: return "arm";
        default: return "center";
    }
}

/// Limb suffix of a foot_/arm_ label, empty otherwise.
std::string limb_of(const std::string& label) {
    if (label.rfind("foot_", 0) == 0) return label.substr(5);
    if (label.rfind("arm_", 0) == 0) return label.substr(4);
    return {};
}

}  // namespace

int ModuleSpec::node_index(const std::string& label) const {
    for (size_t i = 0; i < node_templates.size(); ++i)
        if (node_templates[i].label == label) return static_cast<int>(i);
    return -1;
}

const NodeTemplate& ModuleSpec::node(const std::string& label) const {
    int i = node_index(label);
    if (i < 0) throw Error("unknown-label", "no node '" + label + "'");
    return node_templates[static_cast<size_t>(i)];
}

int ModuleSpec::channel_index(const std::string& label) const {
    std::string want = lower(label);
    for (size_t i = 0; i < sma_channels.size(); ++i)
        if (lower(sma_channels[i].label) == want) return static_cast<int>(i);
    return -1;
}

Vec3 ModuleState::center_of_mass() const {
    Vec3 c = Vec3::Zero();
    for (const auto& p : node_positions) c += p;
    return c / static_cast<double>(node_positions.size());
}

void validate_module_spec(const ModuleSpec& spec) {
    int feet = 0, arms = 0;
    std::set<std::string> labels;
    for (const auto& n : spec.node_templates) {
        if (!labels.insert(n.label).second)
            throw Error("invariant", "duplicate node label '" + n.label + "'");
        if (!n.position.allFinite())
            throw Error("invariant", "non-finite position for node '" + n.label + "'");
        if (n.role == NodeRole::foot) ++feet;
        if (n.role == NodeRole::arm) ++arms;
    }
    if (feet != 3) throw Error("invariant", "foot count != 3 (got " + std::to_string(feet) + ")");
    if (arms != 3) throw Error("invariant", "arm count != 3 (got " + std::to_string(arms) + ")");
    if (spec.node_mass <= 0) throw Error("invariant", "node_mass must be > 0");

    // Vertical symmetry: arms are feet mirrored through the horizontal mid-plane.
    double zmin = 1e300, zmax = -1e300;
    for (const auto& n : spec.node_templates) {
        zmin = std::min(zmin, n.position.z());
        zmax = std::max(zmax, n.position.z());
    }
    double zmid = 0.5 * (zmin + zmax);
    for (const auto& n : spec.node_templates) {
        if (n.role != NodeRole::foot) continue;
        Vec3 mirrored(n.position.x(), n.position.y(), 2.0 * zmid - n.position.z());
        bool found = false;
        for (const auto& m : spec.node_templates) {
            if (m.role == NodeRole::arm && (m.position - mirrored).norm() < 1e-9) found = true;
        }
        if (!found)
            throw Error("invariant", "vertical symmetry broken: no arm mirrors foot '" + n.label + "'");
    }

    for (const auto& e : spec.skeleton_edges) {
        if (spec.node_index(e.node_a) < 0 || spec.node_index(e.node_b) < 0)
            throw Error("invariant", "skeleton edge references unknown node");
        if (e.node_a == e.node_b) throw Error("invariant", "skeleton edge endpoints identical");
        if (e.stiffness <= 0) throw Error("invariant", "skeleton stiffness must be > 0");
        if (e.rest_length <= 0) throw Error("invariant", "skeleton rest_length must be > 0");
    }

    if (spec.sma_channels.size() != 9)
        throw Error("invariant",
                    "sma channel count != 9 (got " + std::to_string(spec.sma_channels.size()) + ")");
    int v = 0, d = 0, h = 0;
    std::set<std::string> chan_labels;
    for (const auto& c : spec.sma_channels) {
        std::string key = lower(c.label);
        if (!chan_labels.insert(key).second)
            throw Error("invariant", "duplicate channel label '" + c.label + "'");
        if (c.node_a == c.node_b)
            throw Error("invariant", "channel '" + c.label + "' endpoints identical");
        const auto& na = spec.node(c.node_a);
        const auto& nb = spec.node(c.node_b);
        if (c.stiffness <= 0)
            throw Error("invariant", "channel '" + c.label + "' stiffness must be > 0");
        if (c.rest_martensite <= 0 || c.rest_austenite <= 0)
            throw Error("invariant", "channel '" + c.label + "' rest lengths must be > 0");
        if (c.rest_austenite >= c.rest_martensite)
            throw Error("invariant",
                        "channel '" + c.label + "' austenite length must be < martensite length");
        char kind = static_cast<char>(std::toupper(static_cast<unsigned char>(c.label.empty() ? '?' : c.label[0])));
        if (kind == 'V') {
            ++v;
            bool same_limb = limb_of(c.node_a) == limb_of(c.node_b) && !limb_of(c.node_a).empty();
            bool foot_arm = (na.role == NodeRole::foot && nb.role == NodeRole::arm) ||
                            (na.role == NodeRole::arm && nb.role == NodeRole::foot);
            if (!foot_arm || !same_limb)
                throw Error("invariant", "V channel '" + c.label + "' must join a foot to its own arm");
        } else if (kind == 'D') {
            ++d;
            bool foot_arm = (na.role == NodeRole::foot && nb.role == NodeRole::arm) ||
                            (na.role == NodeRole::arm && nb.role == NodeRole::foot);
            if (!foot_arm || limb_of(c.node_a) == limb_of(c.node_b))
                throw Error("invariant",
                            "D channel '" + c.label + "' must join a foot to a different-limb arm");
        } else if (kind == 'H') {
            ++h;
            if (na.role != NodeRole::foot || nb.role != NodeRole::foot)
                throw Error("invariant", "H channel '" + c.label + "' must join two feet");
        } else {
            throw Error("invariant", "channel label '" + c.label + "' must start with V, D or H");
        }
    }
    if (v != 3 || d != 3 || h != 3)
        throw Error("invariant", "need 3 vertical, 3 diagonal, 3 horizontal channels");

    for (const auto& m : spec.magnet_sites) {
        if (spec.node_index(m.node) < 0)
            throw Error("invariant", "magnet site references unknown node '" + m.node + "'");
        if (m.polarity < 0 || m.polarity > 2)
            throw Error("invariant", "magnet polarity index must be in 0..2");
    }
}

ModuleSpec load_module_spec(const std::string& descriptor_text) {
    json doc;
    try {
        doc = json::parse(descriptor_text);
    } catch (const json::exception& e) {
        throw Error("parse", e.what());
    }
    ModuleSpec spec;
    try {
        spec.schema_version = doc.value("schema_version", 1);
        spec.name = doc.value("name", "module");
        spec.node_mass = doc.at("node_mass").get<double>();
        spec.magnet_loop =
            doc.value("magnet_loop", "ccw") == std::string("cw") ? LoopOrientation::cw
                                                                 : LoopOrientation::ccw;
        for (const auto& n : doc.at("nodes")) {
            NodeTemplate t;
            t.label = n.at("label").get<std::string>();
            t.role = role_from_string(n.at("role").get<std::string>());
            auto p = n.at("position");
            t.position = Vec3(p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>());
            spec.node_templates.push_back(t);
        }
        for (const auto& e : doc.at("skeleton")) {
            SkeletonEdge edge;
            edge.node_a = e.at("a").get<std::string>();
            edge.node_b = e.at("b").get<std::string>();
            edge.stiffness = e.at("stiffness").get<double>();
            edge.rest_length = e.at("rest_length").get<double>();
            spec.skeleton_edges.push_back(edge);
        }
        for (const auto& c : doc.at("sma_channels")) {
            SmaChannelSpec ch;
            ch.label = c.at("label").get<std::string>();
            ch.node_a = c.at("a").get<std::string>();
            ch.node_b = c.at("b").get<std::string>();
            ch.stiffness = c.at("stiffness").get<double>();
            ch.rest_martensite = c.at("rest_martensite").get<double>();
            ch.rest_austenite = c.at("rest_austenite").get<double>();
            spec.sma_channels.push_back(ch);
        }
        for (const auto& m : doc.value("magnets", json::array())) {
            MagnetSiteSpec site;
            site.node = m.at("node").get<std::string>();
            site.polarity = m.at("polarity").get<int>();
            spec.magnet_sites.push_back(site);
        }
    } catch (const json::exception& e) {
        throw Error("parse", e.what());
    }
    validate_module_spec(spec);
    return spec;
}

std::string serialize_module_spec(const ModuleSpec& spec) {
    json doc;
    doc["schema_version"] = spec.schema_version;
    doc["name"] = spec.name;
    doc["node_mass"] = spec.node_mass;
    doc["magnet_loop"] = spec.magnet_loop == LoopOrientation::cw ? "cw" : "ccw";
    doc["nodes"] = json::array();
    for (const auto& n : spec.node_templates) {
        doc["nodes"].push_back({{"label", n.label},
                                {"role", role_to_string(n.role)},
                                {"position", {n.position.x(), n.position.y(), n.position.z()}}});
    }
    doc["skeleton"] = json::array();
    for (const auto& e : spec.skeleton_edges) {
        doc["skeleton"].push_back({{"a", e.node_a},
                                   {"b", e.node_b},
                                   {"stiffness", e.stiffness},
                                   {"rest_length", e.rest_length}});
    }
    doc["sma_channels"] = json::array();
    for (const auto& c : spec.sma_channels) {
        doc["sma_channels"].push_back({{"label", c.label},
                                       {"a", c.node_a},
                                       {"b", c.node_b},
                                       {"stiffness", c.stiffness},
                                       {"rest_martensite", c.rest_martensite},
                                       {"rest_austenite", c.rest_austenite}});
    }
    doc["magnets"] = json::array();
    for (const auto& m : spec.magnet_sites) {
        doc["magnets"].push_back({{"node", m.node}, {"polarity", m.polarity}});
    }
    return doc.dump(2) + "\n";
}

ModuleSpecPtr make_module_spec(double skeleton_stiffness, double sma_stiffness, double node_mass) {
    {
        const double side = 0.044;                       // installed horizontal SMA length
        const double circum = side / std::sqrt(3.0);
        // Chosen so every inactive SMA is slack or exactly at rest: the
        // diagonal span sqrt(side^2 + height^2) = 72.8 mm sits below the
        // 76 mm installed diagonal length, so passive diagonals carry no
        // tension (their wiring is chiral; preloading them would induce a
        // systematic yaw drift during nominally straight gaits).
        const double height = 0.058;
        const double k_skel = skeleton_stiffness;
        const double k_sma = sma_stiffness;
        const double mass = node_mass;
        const double weight = mass * kGravity;

        auto spec = std::make_shared<ModuleSpec>();
        spec->name = "default-tetra-module";
        spec->node_mass = mass;

        const char* limbs[3] = {"a", "b", "c"};
        // Foot a trails (-x); b front-left (+y), c front-right. Arms mirror feet.
        Vec3 foot_xy[3] = {Vec3(-circum, 0, 0), Vec3(circum / 2, side / 2, 0),
                           Vec3(circum / 2, -side / 2, 0)};
        for (int i = 0; i < 3; ++i)
            spec->node_templates.push_back(
                {std::string("foot_") + limbs[i], foot_xy[i], NodeRole::foot});
        for (int i = 0; i < 3; ++i)
            spec->node_templates.push_back({std::string("arm_") + limbs[i],
                                            foot_xy[i] + Vec3(0, 0, height), NodeRole::arm});
        spec->node_templates.push_back({"center", Vec3(0, 0, height / 2), NodeRole::center});

        // Strut rest lengths carry a static preload so the template pose is an
        // exact equilibrium under gravity (feet on the ground, all SMAs slack
        // or exactly at rest). Derivation: per-node force balance at template.
        const double strut_len = std::sqrt(circum * circum + height * height / 4.0);
        const double half_h = height / 2.0;
        const double rest_center_arm = strut_len + weight * strut_len / (k_skel * half_h);
        const double rest_foot_center = strut_len + 4.0 * weight * strut_len / (3.0 * k_skel * half_h);
        const double arm_ring_tension = 2.0 * weight * circum / (height * std::sqrt(3.0));
        const double rest_arm_arm = side - arm_ring_tension / k_skel;
        const double foot_ring_tension = 8.0 * weight * circum / (3.0 * std::sqrt(3.0) * height);
        const double rest_foot_foot = side - foot_ring_tension / k_skel;

        for (int i = 0; i < 3; ++i) {
            int j = (i + 1) % 3;
            spec->skeleton_edges.push_back({std::string("foot_") + limbs[i],
                                            std::string("foot_") + limbs[j], k_skel, rest_foot_foot});
            spec->skeleton_edges.push_back({std::string("arm_") + limbs[i],
                                            std::string("arm_") + limbs[j], k_skel, rest_arm_arm});
            spec->skeleton_edges.push_back(
                {std::string("foot_") + limbs[i], "center", k_skel, rest_foot_center});
            spec->skeleton_edges.push_back(
                {"center", std::string("arm_") + limbs[i], k_skel, rest_center_arm});
            // Limb strut: gives the printed limb its bending stiffness so a
            // single SMA cannot fold the skeleton. Zero preload at template.
            spec->skeleton_edges.push_back({std::string("foot_") + limbs[i],
                                            std::string("arm_") + limbs[i], k_skel, height});
        }

        // Paper-installed rest lengths: V 8.0/1.52 cm, D 7.6/1.42 cm, H 4.4/0.91 cm.
        for (int i = 0; i < 3; ++i) {
            std::string L = limbs[i];
            std::string U = {static_cast<char>(std::toupper(L[0]))};
            spec->sma_channels.push_back(
                {"V" + U, "foot_" + L, "arm_" + L, k_sma, 0.080, 0.0152});
        }
        for (int i = 0; i < 3; ++i) {
            int j = (i + 1) % 3;
            std::string U = {static_cast<char>(std::toupper(limbs[i][0]))};
            spec->sma_channels.push_back({"D" + U, std::string("foot_") + limbs[i],
                                          std::string("arm_") + limbs[j], k_sma, 0.076, 0.0142});
        }
        const char* hpairs[3][2] = {{"a", "b"}, {"b", "c"}, {"a", "c"}};
        for (auto& hp : hpairs) {
            std::string ua = {static_cast<char>(std::toupper(hp[0][0]))};
            std::string ub = {static_cast<char>(std::toupper(hp[1][0]))};
            spec->sma_channels.push_back({"H" + ua + ub, std::string("foot_") + hp[0],
                                          std::string("foot_") + hp[1], k_sma, side, 0.0091});
        }

        for (int i = 0; i < 3; ++i) {
            spec->magnet_sites.push_back({std::string("foot_") + limbs[i], i});
            spec->magnet_sites.push_back({std::string("arm_") + limbs[i], i});
        }

        validate_module_spec(*spec);
        return ModuleSpecPtr(spec);
    }
}

ModuleSpecPtr default_module_spec() {
    static ModuleSpecPtr cached = make_module_spec(500.0, 60.0, 0.004);
    return cached;
}

ModuleState build_module(ModuleSpecPtr spec, const RigidTransform& pose,
                         const std::string& module_id) {
    if (!spec) throw Error("invariant", "null module spec");
    ModuleState st;
    st.spec = std::move(spec);
    st.module_id = module_id;
    st.node_positions.reserve(st.spec->node_templates.size());
    for (const auto& n : st.spec->node_templates) st.node_positions.push_back(pose.apply(n.position));
    return st;
}

const SmaChannelSpec& channel(const ModuleSpec& spec, const std::string& label) {
    int i = spec.channel_index(label);
    if (i < 0) throw Error("unknown-label", "no SMA channel '" + label + "'");
    return spec.sma_channels[static_cast<size_t>(i)];
}

}  // namespace softlat
