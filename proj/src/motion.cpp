#include "mulsmo/motion.hpp"

#include "mulsmo/checkpoint.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <numbers>

namespace mulsmo {

namespace fs = std::filesystem;

namespace {

Mat offsets_from_rest(const std::vector<int>& parents, const std::vector<Eigen::Vector3d>& rest) {
  Mat off = Mat::Zero(static_cast<Eigen::Index>(parents.size()), 3);
  for (std::size_t j = 0; j < parents.size(); ++j) {
    if (parents[j] < 0) continue;
    off.row(static_cast<Eigen::Index>(j)) = (rest[j] - rest[static_cast<std::size_t>(parents[j])]).transpose();
  }
  return off;
}

double wrap_angle(double a) {
  constexpr double pi = std::numbers::pi;
  a = std::fmod(a + pi, 2.0 * pi);
  if (a < 0) a += 2.0 * pi;
  return a - pi;
}

// Minimal rotation taking unit vector a onto unit vector b.
Eigen::Matrix3d rotation_between(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  const Eigen::Vector3d axis = a.cross(b);
  const double s = axis.norm();
  const double c = a.dot(b);
  if (s < 1e-12) {
    if (c > 0) return Eigen::Matrix3d::Identity();
    Eigen::Vector3d perp = std::abs(a.x()) < 0.9 ? Eigen::Vector3d::UnitX() : Eigen::Vector3d::UnitY();
    perp = (perp - perp.dot(a) * a).normalized();
    return Eigen::AngleAxisd(std::numbers::pi, perp).toRotationMatrix();
  }
  return Eigen::AngleAxisd(std::atan2(s, c), axis / s).toRotationMatrix();
}

}  // namespace

Skeleton Skeleton::humanml22() {
  Skeleton s;
  s.name = "humanml22";
  s.joints = {"pelvis",     "left_hip",      "right_hip",      "spine1",     "left_knee",   "right_knee",
              "spine2",     "left_ankle",    "right_ankle",    "spine3",     "left_foot",   "right_foot",
              "neck",       "left_collar",   "right_collar",   "head",       "left_shoulder", "right_shoulder",
              "left_elbow", "right_elbow",   "left_wrist",     "right_wrist"};
  s.parents = {-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19};
  const std::vector<Eigen::Vector3d> rest = {
      {0, 0.92, 0},      {0.1, 0.86, 0},    {-0.1, 0.86, 0},  {0, 1.04, 0},    {0.1, 0.48, 0.02},
      {-0.1, 0.48, 0.02}, {0, 1.17, 0},     {0.09, 0.07, 0},  {-0.09, 0.07, 0}, {0, 1.32, 0},
      {0.09, 0.02, 0.13}, {-0.09, 0.02, 0.13}, {0, 1.47, 0},  {0.07, 1.40, 0},  {-0.07, 1.40, 0},
      {0, 1.59, 0},      {0.18, 1.42, 0},   {-0.18, 1.42, 0}, {0.18, 1.14, 0},  {-0.18, 1.14, 0},
      {0.18, 0.89, 0},   {-0.18, 0.89, 0}};
  s.rest_offsets = offsets_from_rest(s.parents, rest);
  s.left_hip = 1;
  s.right_hip = 2;
  s.foot_joints = {7, 10, 8, 11};
  s.wrist_joints = {20, 21};
  return s;
}

Skeleton Skeleton::mini8() {
  Skeleton s;
  s.name = "mini8";
  s.joints = {"pelvis", "left_hip", "right_hip", "left_ankle", "right_ankle", "head", "left_wrist", "right_wrist"};
  s.parents = {-1, 0, 0, 1, 2, 0, 5, 5};
  const std::vector<Eigen::Vector3d> rest = {{0, 0.92, 0},     {0.1, 0.86, 0},   {-0.1, 0.86, 0},
                                             {0.09, 0.07, 0},  {-0.09, 0.07, 0}, {0, 1.59, 0},
                                             {0.18, 0.89, 0},  {-0.18, 0.89, 0}};
  s.rest_offsets = offsets_from_rest(s.parents, rest);
  s.left_hip = 1;
  s.right_hip = 2;
  s.foot_joints = {3, 3, 4, 4};
  s.wrist_joints = {6, 7};
  return s;
}

Skeleton Skeleton::by_name(const std::string& name) {
  if (name == "humanml22") return humanml22();
  if (name == "mini8") return mini8();
  throw ConfigError("unknown skeleton '" + name + "' (expected humanml22 or mini8)");
}

Skeleton Skeleton::for_joint_count(int joints) {
  if (joints == 22) return humanml22();
  if (joints == 8) return mini8();
  throw ConfigError("no skeleton with " + std::to_string(joints) + " joints");
}

FeatureLayout::FeatureLayout(int joint_count)
    : joints(joint_count),
      rotations(4 + 3 * (joint_count - 1)),
      velocities(4 + 9 * (joint_count - 1)),
      contacts(4 + 9 * (joint_count - 1) + 3 * joint_count),
      dim(feature_dim_for_joints(joint_count)) {}

ValidationReport validate_motion(const MotionSequence& seq, int joint_count) {
  ValidationReport rep;
  const int expected = feature_dim_for_joints(joint_count);
  if (seq.length() < 1) {
    rep.dimension_ok = false;
    rep.issues.push_back("sequence has no frames");
  }
  if (seq.dim() != expected) {
    rep.dimension_ok = false;
    rep.issues.push_back("feature dimension " + std::to_string(seq.dim()) + " != " + std::to_string(expected) +
                         " for J=" + std::to_string(joint_count));
  }
  if (!seq.frames.allFinite()) {
    rep.finite = false;
    rep.issues.push_back("non-finite values present");
  }
  if (rep.dimension_ok) {
    const FeatureLayout lay(joint_count);
    const auto block = seq.frames.middleCols(lay.contacts, 4);
    for (Eigen::Index i = 0; i < block.size(); ++i) {
      const double v = block(i % block.rows(), i / block.rows());
      if (v != 0.0 && v != 1.0) {
        rep.contacts_binary = false;
        rep.issues.push_back("foot-contact entries must be 0 or 1");
        break;
      }
    }
  }
  return rep;
}

Eigen::Vector3d rotate_y(const Eigen::Vector3d& p, double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  return {c * p.x() + s * p.z(), p.y(), -s * p.x() + c * p.z()};
}

double heading_angle(const JointTrajectory& traj, Eigen::Index t, const Skeleton& skel) {
  const Eigen::Vector3d across = traj.at(t, skel.left_hip) - traj.at(t, skel.right_hip);
  return std::atan2(across.z(), across.x());
}

MotionSequence encode_joints(const JointTrajectory& traj, const Mat& contacts, const Skeleton& skel) {
  const Eigen::Index len = traj.length();
  const int nj = skel.joint_count();
  if (len < 2) throw std::invalid_argument("encode_joints: need at least 2 frames");
  if (traj.joints != nj || traj.positions.cols() != 3 * nj) {
    throw std::invalid_argument("encode_joints: trajectory joint count does not match skeleton");
  }
  if (contacts.rows() != len || contacts.cols() != 4) {
    throw std::invalid_argument("encode_joints: contacts must be L x 4");
  }
  const FeatureLayout lay(nj);
  MotionSequence seq;
  seq.frames = Mat::Zero(len, lay.dim);

  std::vector<double> heading(static_cast<std::size_t>(len));
  for (Eigen::Index t = 0; t < len; ++t) heading[static_cast<std::size_t>(t)] = heading_angle(traj, t, skel);

  for (Eigen::Index t = 0; t < len; ++t) {
    const Eigen::Index tv = std::min<Eigen::Index>(t, len - 2);  // last frame repeats the previous velocity
    const double th = heading[static_cast<std::size_t>(t)];
    const double thv = heading[static_cast<std::size_t>(tv)];
    auto row = seq.frames.row(t);

    row(lay.root_angular) = wrap_angle(heading[static_cast<std::size_t>(tv + 1)] - thv) / kDt;
    Eigen::Vector3d root_step = traj.at(tv + 1, 0) - traj.at(tv, 0);
    root_step.y() = 0.0;
    const Eigen::Vector3d root_vel = rotate_y(root_step, thv) / kDt;
    row(lay.root_linear) = root_vel.x();
    row(lay.root_linear + 1) = root_vel.z();

    const Eigen::Vector3d root = traj.at(t, 0);
    row(lay.root_height) = root.y();
    for (int j = 1; j < nj; ++j) {
      Eigen::Vector3d rel = traj.at(t, j) - root;
      rel.y() = traj.at(t, j).y();
      const Eigen::Vector3d local = rotate_y(rel, th);
      for (int k = 0; k < 3; ++k) row(lay.local_positions + 3 * (j - 1) + k) = local(k);

      const Eigen::Vector3d bone = rotate_y(traj.at(t, j) - traj.at(t, skel.parents[static_cast<std::size_t>(j)]), th);
      const Eigen::Vector3d rest = skel.rest_offsets.row(j).transpose();
      Eigen::Matrix3d rot = Eigen::Matrix3d::Identity();
      if (bone.norm() > 1e-12 && rest.norm() > 1e-12) rot = rotation_between(rest.normalized(), bone.normalized());
      for (int k = 0; k < 3; ++k) {
        row(lay.rotations + 6 * (j - 1) + k) = rot(k, 0);
        row(lay.rotations + 6 * (j - 1) + 3 + k) = rot(k, 1);
      }
    }
    for (int j = 0; j < nj; ++j) {
      const Eigen::Vector3d vel = rotate_y(traj.at(tv + 1, j) - traj.at(tv, j), thv) / kDt;
      for (int k = 0; k < 3; ++k) row(lay.velocities + 3 * j + k) = vel(k);
    }
    for (int k = 0; k < 4; ++k) row(lay.contacts + k) = contacts(t, k);
  }
  return seq;
}

JointTrajectory recover_joints(const MotionSequence& seq, const Skeleton& skel) {
  const int nj = skel.joint_count();
  const FeatureLayout lay(nj);
  if (seq.dim() != lay.dim) {
    throw std::invalid_argument("recover_joints: feature dimension " + std::to_string(seq.dim()) +
                                " does not match skeleton " + skel.name);
  }
  const Eigen::Index len = seq.length();
  JointTrajectory traj;
  traj.joints = nj;
  traj.positions = Mat::Zero(len, 3 * nj);

  double heading = 0.0;
  Eigen::Vector3d root(0.0, 0.0, 0.0);
  for (Eigen::Index t = 0; t < len; ++t) {
    const auto row = seq.frames.row(t);
    root.y() = row(lay.root_height);
    traj.set(t, 0, root);
    for (int j = 1; j < nj; ++j) {
      const Eigen::Vector3d local(row(lay.local_positions + 3 * (j - 1)), row(lay.local_positions + 3 * (j - 1) + 1),
                                  row(lay.local_positions + 3 * (j - 1) + 2));
      Eigen::Vector3d world = rotate_y(local, -heading);
      world.x() += root.x();
      world.z() += root.z();
      traj.set(t, j, world);
    }
    const Eigen::Vector3d vel(row(lay.root_linear), 0.0, row(lay.root_linear + 1));
    const Eigen::Vector3d step = rotate_y(vel, -heading) * kDt;
    root.x() += step.x();
    root.z() += step.z();
    heading += row(lay.root_angular) * kDt;
  }
  return traj;
}

JointTrajectory canonicalize(const JointTrajectory& traj, const Skeleton& skel) {
  JointTrajectory out = traj;
  const double th0 = heading_angle(traj, 0, skel);
  const Eigen::Vector3d root0 = traj.at(0, 0);
  for (Eigen::Index t = 0; t < traj.length(); ++t) {
    for (int j = 0; j < traj.joints; ++j) {
      Eigen::Vector3d p = traj.at(t, j);
      p.x() -= root0.x();
      p.z() -= root0.z();
      out.set(t, j, rotate_y(p, th0));
    }
  }
  return out;
}

NormStats fit_stats(const std::vector<Mat>& sequences) {
  if (sequences.empty()) throw std::invalid_argument("fit_stats: no sequences");
  const Eigen::Index dim = sequences.front().cols();
  Eigen::Index rows = 0;
  RowVecD sum = RowVecD::Zero(dim);
  for (const auto& s : sequences) {
    if (s.cols() != dim) throw std::invalid_argument("fit_stats: inconsistent feature dimension");
    sum += s.colwise().sum();
    rows += s.rows();
  }
  NormStats st;
  st.mean = sum / double(rows);
  RowVecD sq = RowVecD::Zero(dim);
  for (const auto& s : sequences) sq += (s.rowwise() - st.mean).array().square().matrix().colwise().sum();
  st.std = (sq / double(rows)).array().sqrt();
  for (Eigen::Index d = 0; d < dim; ++d) {
    if (st.std(d) < kStdFloor) {
      st.std(d) = kStdFloor;
      st.clamped.push_back(static_cast<int>(d));
    }
  }
  if (!st.clamped.empty()) {
    std::cerr << "warning: " << st.clamped.size() << " feature dimension(s) have ~zero std; clamped to "
              << kStdFloor << "\n";
  }
  return st;
}

MotionSequence normalize(const MotionSequence& seq, const NormStats& stats) {
  if (stats.mean.size() != seq.dim()) throw std::invalid_argument("normalize: stats dimension mismatch");
  MotionSequence out;
  out.frames = (seq.frames.rowwise() - stats.mean).array().rowwise() / stats.std.array();
  return out;
}

MotionSequence denormalize(const MotionSequence& seq, const NormStats& stats) {
  if (stats.mean.size() != seq.dim()) throw std::invalid_argument("denormalize: stats dimension mismatch");
  MotionSequence out;
  out.frames = (seq.frames.array().rowwise() * stats.std.array()).matrix().rowwise() + stats.mean;
  return out;
}

void save_motion(const fs::path& path, const MotionSequence& seq, int joint_count) {
  write_f32(path, seq.frames);
  nlohmann::json side = {{"L", seq.length()}, {"D", seq.dim()}, {"J", joint_count}, {"fps", kFps}};
  write_json(fs::path(path.string() + ".json"), side);
}

MotionSequence load_motion(const fs::path& path, int* joint_count) {
  const auto side = read_json(fs::path(path.string() + ".json"));
  const auto len = side.at("L").get<Eigen::Index>();
  const auto dim = side.at("D").get<Eigen::Index>();
  const int nj = side.at("J").get<int>();
  if (feature_dim_for_joints(nj) != dim) throw ConfigError(path.string() + ": sidecar D does not match J");
  if (joint_count) *joint_count = nj;
  MotionSequence seq;
  seq.frames = read_f32(path, len, dim);
  return seq;
}

MotionSequence import_humanml3d_npy(const fs::path& path) {
  const std::string bytes = read_text(path);
  if (bytes.size() < 10 || bytes.compare(0, 6, "\x93NUMPY") != 0) throw ConfigError(path.string() + ": not an .npy file");
  const auto major = static_cast<unsigned char>(bytes[6]);
  std::size_t header_len = 0;
  std::size_t offset = 0;
  if (major == 1) {
    header_len = static_cast<unsigned char>(bytes[8]) | (static_cast<std::size_t>(static_cast<unsigned char>(bytes[9])) << 8);
    offset = 10;
  } else {
    header_len = 0;
    for (int i = 0; i < 4; ++i) header_len |= static_cast<std::size_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
    offset = 12;
  }
  const std::string header = bytes.substr(offset, header_len);
  if (header.find("'<f4'") == std::string::npos) throw ConfigError(path.string() + ": only little-endian float32 supported");
  if (header.find("'fortran_order': True") != std::string::npos) throw ConfigError(path.string() + ": fortran order unsupported");
  const auto lp = header.find('(');
  const auto rp = header.find(')');
  if (lp == std::string::npos || rp == std::string::npos) throw ConfigError(path.string() + ": bad shape");
  const std::string shape = header.substr(lp + 1, rp - lp - 1);
  long rows = 0;
  long cols = 0;
  if (std::sscanf(shape.c_str(), "%ld, %ld", &rows, &cols) != 2) throw ConfigError(path.string() + ": expected 2-D array");
  const std::size_t data_off = offset + header_len;
  if (bytes.size() < data_off + static_cast<std::size_t>(rows * cols) * 4) throw ConfigError(path.string() + ": truncated");
  MotionSequence seq;
  seq.frames.resize(rows, cols);
  for (long r = 0; r < rows; ++r) {
    for (long c = 0; c < cols; ++c) {
      float f;
      std::memcpy(&f, bytes.data() + data_off + static_cast<std::size_t>(r * cols + c) * 4, 4);
      seq.frames(r, c) = f;
    }
  }
  return seq;
}

}  // namespace mulsmo
