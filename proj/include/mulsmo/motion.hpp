#pragma once

// Root-velocity motion features (HumanML3D layout).
//
// Per frame, for a skeleton with J joints:
//   [0]                root angular velocity about +y (rad/s)
//   [1, 2]             root linear velocity (x, z) in the heading frame (m/s)
//   [3]                root height (m)
//   [4, 4+3(J-1))      joint positions relative to the root (xz) in the heading frame, y absolute
//   next 6(J-1)        joint rotations, 6-D (first two columns of the rotation matrix)
//   next 3J            joint velocities in the heading frame (m/s)
//   last 4             foot contacts {left ankle, left toe, right ankle, right toe}
// D = 12J - 1, so J = 22 gives 263.

#include "mulsmo/nn.hpp"

#include <array>
#include <filesystem>
#include <string>
#include <vector>

namespace mulsmo {

inline constexpr double kFps = 20.0;
inline constexpr double kDt = 1.0 / kFps;

struct Skeleton {
  std::string name;
  std::vector<std::string> joints;
  std::vector<int> parents;  // -1 for the root
  Mat rest_offsets;          // J x 3 bone vectors from parent, rest pose
  int left_hip = 1;
  int right_hip = 2;
  std::array<int, 4> foot_joints{};  // left ankle, left toe, right ankle, right toe
  std::array<int, 2> wrist_joints{};

  int joint_count() const { return static_cast<int>(joints.size()); }
  int feature_dim() const { return 12 * joint_count() - 1; }

  static Skeleton humanml22();
  static Skeleton mini8();
  static Skeleton by_name(const std::string& name);
  static Skeleton for_joint_count(int joints);
};

struct FeatureLayout {
  int joints;
  int root_angular = 0;
  int root_linear = 1;
  int root_height = 3;
  int local_positions = 4;
  int rotations;
  int velocities;
  int contacts;
  int dim;

  explicit FeatureLayout(int joint_count);
};

inline int feature_dim_for_joints(int joints) { return 12 * joints - 1; }

struct MotionSequence {
  Mat frames;  // L x D
  Eigen::Index length() const { return frames.rows(); }
  Eigen::Index dim() const { return frames.cols(); }
};

struct JointTrajectory {
  Mat positions;  // L x 3J, row t = (x0, y0, z0, x1, ...)
  int joints = 0;

  Eigen::Index length() const { return positions.rows(); }
  Eigen::Vector3d at(Eigen::Index t, int j) const {
    return positions.block(t, 3 * j, 1, 3).transpose();
  }
  void set(Eigen::Index t, int j, const Eigen::Vector3d& p) { positions.block(t, 3 * j, 1, 3) = p.transpose(); }
};

struct ValidationReport {
  bool dimension_ok = true;
  bool finite = true;
  bool contacts_binary = true;
  std::vector<std::string> issues;
  bool ok() const { return dimension_ok && finite && contacts_binary; }
};

ValidationReport validate_motion(const MotionSequence& seq, int joint_count);

// Heading of a pose: yaw that maps the right-hip -> left-hip vector onto +x.
double heading_angle(const JointTrajectory& traj, Eigen::Index t, const Skeleton& skel);

// Rotation about +y applied to (x, z).
Eigen::Vector3d rotate_y(const Eigen::Vector3d& p, double angle);

MotionSequence encode_joints(const JointTrajectory& traj, const Mat& contacts, const Skeleton& skel);
JointTrajectory recover_joints(const MotionSequence& seq, const Skeleton& skel);

// Root at the xz origin and zero heading at frame 0; recover(encode(t)) equals canonicalize(t).
JointTrajectory canonicalize(const JointTrajectory& traj, const Skeleton& skel);

struct NormStats {
  RowVecD mean;
  RowVecD std;
  std::vector<int> clamped;  // dimensions whose std was clamped to the floor
};

inline constexpr double kStdFloor = 1e-6;

NormStats fit_stats(const std::vector<Mat>& sequences);
MotionSequence normalize(const MotionSequence& seq, const NormStats& stats);
MotionSequence denormalize(const MotionSequence& seq, const NormStats& stats);

// Motion files: raw float32 L x D row-major plus a JSON sidecar {L, D, J, fps}.
void save_motion(const std::filesystem::path& path, const MotionSequence& seq, int joint_count);
MotionSequence load_motion(const std::filesystem::path& path, int* joint_count = nullptr);

// Experimental: reads a HumanML3D-style .npy array (little-endian float32, C order, shape (L, D)).
MotionSequence import_humanml3d_npy(const std::filesystem::path& path);

}  // namespace mulsmo
