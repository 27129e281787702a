#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <stdexcept>
#include <string>

namespace softlat {

using Vec3 = Eigen::Vector3d;
using Vec2 = Eigen::Vector2d;

/// Error with a short category tag, e.g. "parse", "invariant", "unknown-label".
class Error : public std::runtime_error {
public:
    Error(std::string category, const std::string& message)
        : std::runtime_error("[" + category + "] " + message), category_(std::move(category)) {}

    const std::string& category() const { return category_; }

private:
    std::string category_;
};

/// Rigid transform applied as p' = R * p + t.
struct RigidTransform {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Vec3 translation = Vec3::Zero();

    static RigidTransform identity() { return {}; }

    static RigidTransform translate(const Vec3& t) {
        RigidTransform tf;
        tf.translation = t;
        return tf;
    }

    /// Yaw about +z followed by translation.
    static RigidTransform yaw_translate(double yaw_rad, const Vec3& t) {
        RigidTransform tf;
        tf.rotation = Eigen::AngleAxisd(yaw_rad, Vec3::UnitZ()).toRotationMatrix();
        tf.translation = t;
        return tf;
    }

    Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
};

/// Identifies one node within a multi-module system.
struct NodeRef {
    int module = 0;
    int node = 0;

    friend bool operator==(const NodeRef& a, const NodeRef& b) {
        return a.module == b.module && a.node == b.node;
    }
    friend bool operator<(const NodeRef& a, const NodeRef& b) {
        return a.module != b.module ? a.module < b.module : a.node < b.node;
    }
};

inline constexpr double kGravity = 9.81;  // m/s^2

}  // namespace softlat
