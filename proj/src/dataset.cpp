#include "mulsmo/dataset.hpp"

#include "mulsmo/checkpoint.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace mulsmo {

namespace fs = std::filesystem;

namespace {

constexpr double kPi = std::numbers::pi;

struct ContentSpec {
  const char* name;
  std::vector<std::string> templates;
  double speed;
  Eigen::Vector3d dir;
  double freq;
  double duty;
  double turn;
  double hop;
  double arm_swing;
  double lift;
  double crouch;
  double lean;
  int special;  // 0 locomotion, 1 jump, 2 kick, 3 wave
};

const std::vector<ContentSpec>& contents() {
  static const std::vector<ContentSpec> specs = {
      {"walk", {"a person walks forward", "someone walks ahead", "a person is walking"},
       1.2, {0, 0, 1}, 0.9, 0.62, 0.0, 0.0, 0.35, 0.12, 0.0, 0.0, 0},
      {"run", {"a person runs forward", "someone is running", "a person jogs quickly ahead"},
       2.6, {0, 0, 1}, 1.35, 0.40, 0.0, 0.0, 0.7, 0.16, 0.04, 0.12, 0},
      {"jump", {"a person jumps in place", "someone hops up and down", "a person is jumping"},
       0.0, {0, 0, 1}, 1.1, 0.5, 0.0, 0.22, 0.25, 0.0, 0.0, 0.0, 1},
      {"turn", {"a person turns around in place", "someone spins slowly", "a person is turning"},
       0.15, {0, 0, 1}, 0.9, 0.62, 1.6, 0.0, 0.2, 0.1, 0.0, 0.0, 0},
      {"sidestep", {"a person steps to the side", "someone shuffles sideways", "a person sidesteps"},
       0.7, {1, 0, 0}, 1.0, 0.6, 0.0, 0.0, 0.15, 0.1, 0.0, 0.0, 0},
      {"crouch", {"a person sneaks forward crouched", "someone creeps low to the ground", "a person is crouching"},
       0.6, {0, 0, 1}, 0.8, 0.65, 0.0, 0.0, 0.25, 0.1, 0.25, 0.2, 0},
      {"kick", {"a person kicks with the right leg", "someone kicks forward", "a person is kicking"},
       0.0, {0, 0, 1}, 0.8, 0.5, 0.0, 0.0, 0.2, 0.0, 0.0, 0.0, 2},
      {"wave", {"a person waves with the right hand", "someone waves hello", "a person is waving"},
       0.0, {0, 0, 1}, 1.2, 0.5, 0.0, 0.0, 0.1, 0.0, 0.0, 0.0, 3},
  };
  return specs;
}

struct StyleSpec {
  double tempo = 1.0;
  double stride = 1.0;
  double lean = 0.0;
  double side_lean = 0.0;
  double arm_swing = 1.0;
  double abduct = 0.1;
  double forward = 0.0;
  double flap_amp = 0.0;
  double flap_freq = 0.0;
  double roll_amp = 0.0;
  double roll_freq = 0.0;
  double asym = 0.0;
  double bob = 1.0;
  double head_drop = 0.0;
  double elbow = 0.25;
  double width = 1.0;
  double sway = 0.0;
};

const std::vector<StyleLabel> kStyleCatalogue = {
    {"flapping", "OBJ"}, {"aeroplane", "CHAR"}, {"old", "PER"},    {"proud", "EMO"},    {"zombie", "CHAR"},
    {"rushed", "PER"},   {"depressed", "EMO"},  {"robot", "CHAR"}, {"heavyset", "PER"}, {"leanleft", "ACT"},
};

StyleSpec style_spec(int style) {
  StyleSpec s;
  switch (style) {
    case 0:  // flapping: arms out, rapid up-down
      s.abduct = 0.75;
      s.flap_amp = 0.8;
      s.flap_freq = 2.5;
      s.arm_swing = 0.2;
      break;
    case 1:  // aeroplane: arms horizontal, banking torso
      s.abduct = 1.5;
      s.arm_swing = 0.1;
      s.roll_amp = 0.25;
      s.roll_freq = 0.5;
      break;
    case 2:  // old
      s.tempo = 0.65;
      s.stride = 0.6;
      s.lean = 0.35;
      s.arm_swing = 0.3;
      s.bob = 0.4;
      s.head_drop = 0.25;
      break;
    case 3:  // proud
      s.lean = -0.22;
      s.arm_swing = 1.6;
      s.stride = 1.15;
      s.head_drop = -0.2;
      break;
    case 4:  // zombie
      s.forward = 1.45;
      s.arm_swing = 0.05;
      s.tempo = 0.7;
      s.asym = 0.5;
      s.lean = 0.08;
      s.elbow = 0.0;
      break;
    case 5:  // rushed
      s.tempo = 1.5;
      s.lean = 0.25;
      s.arm_swing = 1.4;
      break;
    case 6:  // depressed
      s.tempo = 0.75;
      s.lean = 0.3;
      s.head_drop = 0.35;
      s.arm_swing = 0.15;
      s.stride = 0.7;
      break;
    case 7:  // robot
      s.elbow = 1.5;
      s.arm_swing = 0.6;
      s.bob = 0.0;
      break;
    case 8:  // heavyset
      s.width = 1.7;
      s.abduct = 0.35;
      s.tempo = 0.85;
      s.sway = 0.05;
      break;
    case 9:  // leanleft
      s.side_lean = 0.3;
      break;
    default:
      break;
  }
  return s;
}

Eigen::Matrix3d rot_x(double a) { return Eigen::AngleAxisd(a, Eigen::Vector3d::UnitX()).toRotationMatrix(); }
Eigen::Matrix3d rot_z(double a) { return Eigen::AngleAxisd(a, Eigen::Vector3d::UnitZ()).toRotationMatrix(); }

double frac(double x) { return x - std::floor(x); }

struct FootState {
  Eigen::Vector3d pos;
  bool contact;
};

// Full 22-joint body in the heading frame (x left, y up, z forward).
std::vector<Eigen::Vector3d> body_pose(const ContentSpec& c, const StyleSpec& st, double time, double phase0,
                                       double flap_phase, double speed, double freq, double scale,
                                       double arm_gain, std::array<bool, 2>& contact) {
  std::vector<Eigen::Vector3d> p(22, Eigen::Vector3d::Zero());
  const double phase = 2.0 * kPi * freq * time + phase0;
  const double hip_w = 0.1 * scale * st.width;
  const double ankle_h = 0.07 * scale;

  double hop = 0.0;
  if (c.special == 1) hop = c.hop * std::max(0.0, std::sin(phase));
  const double pelvis_y = 0.92 * scale - c.crouch + 0.03 * st.bob * std::cos(2.0 * phase) * (c.special == 0) + hop;
  const double sway = st.sway * std::sin(phase);
  p[0] = {sway, pelvis_y, 0.0};
  p[1] = p[0] + Eigen::Vector3d(hip_w, -0.06 * scale, 0.0);
  p[2] = p[0] + Eigen::Vector3d(-hip_w, -0.06 * scale, 0.0);

  const double step_len = freq > 0 ? speed / freq : 0.0;
  auto foot = [&](double ph, double side, double lift_gain) -> FootState {
    FootState f;
    const double base_x = side * hip_w * 0.9;
    if (c.special == 1) {
      f.pos = {base_x, ankle_h + hop, 0.0};
      f.contact = hop < 0.01;
      return f;
    }
    if (c.special == 2 && side < 0) {  // kicking right leg
      const double k = std::max(0.0, std::sin(ph));
      f.pos = {base_x, ankle_h + 0.45 * k * k, 0.55 * k};
      f.contact = k < 0.05;
      return f;
    }
    if (c.special >= 2 || step_len == 0.0) {
      if (c.turn == 0.0) {
        f.pos = {base_x, ankle_h, 0.0};
        f.contact = true;
        return f;
      }
    }
    const double u = frac(ph / (2.0 * kPi));
    double s = 0.0;
    double lift = 0.0;
    if (u < c.duty) {
      s = (0.5 - u / c.duty) * c.duty * step_len;
      f.contact = true;
    } else {
      const double w = (u - c.duty) / (1.0 - c.duty);
      // The foot travels one stride in the world with eased start and stop; the
      // root covers (1 - duty) of a stride meanwhile. Early lift keeps it off the floor.
      const double eased = w - std::sin(2.0 * kPi * w) / (2.0 * kPi);
      s = -0.5 * c.duty * step_len + step_len * eased - (1.0 - c.duty) * step_len * w;
      lift = c.lift * lift_gain * std::sqrt(std::sin(kPi * w));
      f.contact = false;
    }
    f.pos = Eigen::Vector3d(base_x, ankle_h + lift, 0.0) + c.dir * s;
    return f;
  };
  const FootState lf = foot(phase, 1.0, 1.0);
  const FootState rf = foot(phase + kPi, -1.0, 1.0 - st.asym);
  contact = {lf.contact, rf.contact};
  p[7] = lf.pos;
  p[8] = rf.pos;
  p[10] = lf.pos + Eigen::Vector3d(0.0, -0.05 * scale, 0.13 * scale);
  p[11] = rf.pos + Eigen::Vector3d(0.0, -0.05 * scale, 0.13 * scale);
  const double knee_fwd = 0.05 + 0.3 * c.crouch;
  p[4] = 0.5 * (p[1] + p[7]) + Eigen::Vector3d(0.0, 0.0, knee_fwd);
  p[5] = 0.5 * (p[2] + p[8]) + Eigen::Vector3d(0.0, 0.0, knee_fwd);

  const double roll = st.roll_amp * std::sin(2.0 * kPi * st.roll_freq * time) + st.side_lean;
  const Eigen::Matrix3d upper = rot_z(-roll) * rot_x(st.lean + c.lean);
  auto up = [&](double x, double y, double z) -> Eigen::Vector3d {
    return p[0] + upper * Eigen::Vector3d(x, y, z) * scale;
  };
  p[3] = up(0, 0.12, 0);
  p[6] = up(0, 0.25, 0);
  p[9] = up(0, 0.40, 0);
  p[12] = up(0, 0.55, 0);
  p[15] = p[12] + upper * rot_x(st.head_drop) * Eigen::Vector3d(0, 0.12 * scale, 0);
  p[13] = up(0.07, 0.48, 0);
  p[14] = up(-0.07, 0.48, 0);
  p[16] = up(0.18, 0.50, 0);
  p[17] = up(-0.18, 0.50, 0);

  const double flap = st.flap_amp * std::sin(2.0 * kPi * st.flap_freq * time + flap_phase);
  for (int side = 0; side < 2; ++side) {
    const double sx = side == 0 ? 1.0 : -1.0;
    // Each arm swings against the opposite leg.
    double alpha = st.forward + arm_gain * c.arm_swing * st.arm_swing * std::sin(phase + (side == 0 ? kPi : 0.0));
    double beta = st.abduct + flap;
    if (c.special == 1) alpha += 0.6 * hop / std::max(c.hop, 1e-9);
    if (c.special == 3 && side == 1) {
      alpha = 0.3;
      beta = 2.6 + 0.35 * std::sin(phase);
    }
    const Eigen::Vector3d d(sx * std::sin(beta), -std::cos(beta) * std::cos(alpha), std::cos(beta) * std::sin(alpha));
    const Eigen::Vector3d fore = (d + st.elbow * Eigen::Vector3d(0, 0.7, 0.7)).normalized();
    const Eigen::Vector3d shoulder = p[side == 0 ? 16 : 17];
    const Eigen::Vector3d elbow = shoulder + upper * d * 0.28 * scale;
    p[side == 0 ? 18 : 19] = elbow;
    p[side == 0 ? 20 : 21] = elbow + upper * fore * 0.25 * scale;
  }
  return p;
}

std::vector<int> skeleton_map(const Skeleton& skel) {
  const Skeleton full = Skeleton::humanml22();
  std::vector<int> map;
  for (const auto& name : skel.joints) {
    int idx = -1;
    for (int j = 0; j < full.joint_count(); ++j) {
      if (full.joints[static_cast<std::size_t>(j)] == name) idx = j;
    }
    if (idx < 0) throw ConfigError("skeleton joint " + name + " unknown to the generator");
    map.push_back(idx);
  }
  return map;
}

char entry_name_buf[64];

}  // namespace

int synth_content_count() { return static_cast<int>(contents().size()); }
int synth_style_count() { return static_cast<int>(kStyleCatalogue.size()); }
const std::vector<StyleLabel>& synth_style_catalogue() { return kStyleCatalogue; }

std::vector<std::string> content_templates(int content) {
  return contents().at(static_cast<std::size_t>(content)).templates;
}

SynthSample synth_motion(int content, int style, int frames, const Skeleton& skel, Rng& rng) {
  if (content < 0 || content >= synth_content_count() || style < 0 || style >= synth_style_count()) {
    throw ConfigError("synth_motion: label out of range");
  }
  if (frames < 2) throw ConfigError("synth_motion: need at least 2 frames");
  const ContentSpec& c = contents()[static_cast<std::size_t>(content)];
  const StyleSpec st = style_spec(style);
  const double speed = c.speed * st.tempo * st.stride * (0.9 + 0.2 * rng.uniform());
  const double freq = c.freq * st.tempo * (0.93 + 0.14 * rng.uniform());
  const double phase0 = 2.0 * kPi * rng.uniform();
  const double flap_phase = 2.0 * kPi * rng.uniform();
  const double scale = 0.95 + 0.1 * rng.uniform();
  const double arm_gain = 0.9 + 0.2 * rng.uniform();
  const double turn = c.turn * st.tempo;
  const auto map = skeleton_map(skel);

  SynthSample out;
  out.trajectory.joints = skel.joint_count();
  out.trajectory.positions = Mat::Zero(frames, 3 * skel.joint_count());
  out.contacts = Mat::Zero(frames, 4);
  double heading = 0.0;
  Eigen::Vector3d root(0.0, 0.0, 0.0);
  for (int t = 0; t < frames; ++t) {
    const double time = t * kDt;
    std::array<bool, 2> contact{};
    const auto pose = body_pose(c, st, time, phase0, flap_phase, speed, freq, scale, arm_gain, contact);
    for (int j = 0; j < skel.joint_count(); ++j) {
      Eigen::Vector3d w = rotate_y(pose[static_cast<std::size_t>(map[static_cast<std::size_t>(j)])], -heading);
      w.x() += root.x();
      w.z() += root.z();
      out.trajectory.set(t, j, w);
    }
    out.contacts(t, 0) = out.contacts(t, 1) = contact[0] ? 1.0 : 0.0;
    out.contacts(t, 2) = out.contacts(t, 3) = contact[1] ? 1.0 : 0.0;
    const Eigen::Vector3d step = rotate_y(c.dir * speed, -heading) * kDt;
    root.x() += step.x();
    root.z() += step.z();
    heading += turn * kDt;
  }
  return out;
}

nlohmann::json SynthConfig::to_json() const {
  return {{"n_content", n_content}, {"n_style", n_style}, {"samples_per_pair", samples_per_pair},
          {"frames", frames},       {"joints", joints},   {"seed", seed},
          {"test_fraction", test_fraction}};
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
  SynthConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "n_content") c.n_content = value.get<int>();
    else if (key == "n_style") c.n_style = value.get<int>();
    else if (key == "samples_per_pair") c.samples_per_pair = value.get<int>();
    else if (key == "frames") c.frames = value.get<int>();
    else if (key == "joints") c.joints = value.get<int>();
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else if (key == "test_fraction") c.test_fraction = value.get<double>();
    else throw ConfigError("synth config: unknown key '" + key + "'");
  }
  return c;
}

MotionDataset synth_dataset(const SynthConfig& config) {
  if (config.n_content < 2 || config.n_content > synth_content_count()) {
    throw ConfigError("synth config: n_content must be in [2, " + std::to_string(synth_content_count()) + "]");
  }
  if (config.n_style < 2 || config.n_style > synth_style_count()) {
    throw ConfigError("synth config: n_style must be in [2, " + std::to_string(synth_style_count()) + "]");
  }
  if (config.samples_per_pair < 1 || config.frames < 2) throw ConfigError("synth config: samples_per_pair >= 1 and frames >= 2 required");
  if (config.test_fraction < 0.0 || config.test_fraction >= 1.0) throw ConfigError("synth config: test_fraction in [0, 1)");
  const Skeleton skel = Skeleton::for_joint_count(config.joints);

  MotionDataset ds;
  auto& m = ds.manifest;
  m.skeleton = skel.name;
  m.joints = skel.joint_count();
  m.frames = config.frames;
  for (int c = 0; c < config.n_content; ++c) m.content_taxonomy.emplace_back(contents()[static_cast<std::size_t>(c)].name);
  for (int s = 0; s < config.n_style; ++s) m.style_taxonomy.push_back(kStyleCatalogue[static_cast<std::size_t>(s)]);
  m.generator = config.to_json();

  const Rng master(config.seed);
  const int n_train = config.samples_per_pair - static_cast<int>(std::lround(config.samples_per_pair * config.test_fraction));
  for (int c = 0; c < config.n_content; ++c) {
    for (int s = 0; s < config.n_style; ++s) {
      for (int k = 0; k < config.samples_per_pair; ++k) {
        Rng rng = master.fork(static_cast<std::uint64_t>(c) * 1000003ULL + static_cast<std::uint64_t>(s) * 1009ULL +
                              static_cast<std::uint64_t>(k));
        const auto sample = synth_motion(c, s, config.frames, skel, rng);
        const auto& templates = contents()[static_cast<std::size_t>(c)].templates;
        ManifestEntry e;
        std::snprintf(entry_name_buf, sizeof(entry_name_buf), "motions/c%d_s%d_%03d.mot", c, s, k);
        e.motion = entry_name_buf;
        e.content = c;
        e.style = s;
        e.text = templates[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(templates.size()) - 1))];
        e.split = k < n_train ? "train" : "test";
        m.entries.push_back(e);
        ds.motions.push_back(encode_joints(sample.trajectory, sample.contacts, skel).frames);
      }
    }
  }
  std::vector<Mat> train;
  for (auto i : ds.split_indices("train")) train.push_back(ds.motions[i]);
  m.stats = fit_stats(train);
  return ds;
}

std::vector<std::size_t> MotionDataset::split_indices(const std::string& split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    if (split.empty() || manifest.entries[i].split == split) out.push_back(i);
  }
  return out;
}

Mat MotionDataset::normalized(std::size_t i) const {
  return normalize(MotionSequence{motions.at(i)}, manifest.stats).frames;
}

namespace {

nlohmann::json row_to_json(const RowVecD& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

RowVecD row_from_json(const nlohmann::json& a) {
  RowVecD v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<Eigen::Index>(i)) = a[i].get<double>();
  return v;
}

}  // namespace

nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json j;
  j["schema"] = m.schema;
  j["skeleton"] = m.skeleton;
  j["joints"] = m.joints;
  j["frames"] = m.frames;
  j["fps"] = kFps;
  j["content_taxonomy"] = m.content_taxonomy;
  j["style_taxonomy"] = nlohmann::json::array();
  for (const auto& s : m.style_taxonomy) j["style_taxonomy"].push_back({{"name", s.name}, {"group", s.group}});
  j["entries"] = nlohmann::json::array();
  for (const auto& e : m.entries) {
    j["entries"].push_back(
        {{"motion", e.motion}, {"content", e.content}, {"text", e.text}, {"style", e.style}, {"split", e.split}});
  }
  j["normalization"] = {{"mean", row_to_json(m.stats.mean)}, {"std", row_to_json(m.stats.std)},
                        {"clamped", m.stats.clamped}};
  j["generator"] = m.generator;
  return j;
}

DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    m.schema = j.at("schema").get<int>();
    if (m.schema != 1) throw ConfigError("manifest: unsupported schema " + std::to_string(m.schema));
    m.skeleton = j.at("skeleton").get<std::string>();
    m.joints = j.at("joints").get<int>();
    m.frames = j.at("frames").get<int>();
    m.content_taxonomy = j.at("content_taxonomy").get<std::vector<std::string>>();
    for (const auto& s : j.at("style_taxonomy")) {
      m.style_taxonomy.push_back({s.at("name").get<std::string>(), s.at("group").get<std::string>()});
    }
    for (const auto& e : j.at("entries")) {
      ManifestEntry me;
      me.motion = e.at("motion").get<std::string>();
      me.content = e.at("content").get<int>();
      me.text = e.at("text").get<std::string>();
      me.style = e.at("style").get<int>();
      me.split = e.at("split").get<std::string>();
      if (me.content < 0 || me.content >= static_cast<int>(m.content_taxonomy.size()) || me.style < 0 ||
          me.style >= static_cast<int>(m.style_taxonomy.size())) {
        throw ConfigError("manifest: label id outside taxonomy for " + me.motion);
      }
      m.entries.push_back(me);
    }
    const auto& norm = j.at("normalization");
    m.stats.mean = row_from_json(norm.at("mean"));
    m.stats.std = row_from_json(norm.at("std"));
    m.stats.clamped = norm.value("clamped", std::vector<int>{});
    if (m.stats.mean.size() != m.feature_dim() || m.stats.std.size() != m.feature_dim()) {
      throw ConfigError("manifest: normalization stats must have dimension D");
    }
    m.generator = j.value("generator", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("manifest: ") + e.what());
  }
  return m;
}

MotionDataset load_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) {
    throw MissingDependency("no dataset at " + dir.string() + " (run `mulsmo synth-data` first)");
  }
  MotionDataset ds;
  ds.manifest = manifest_from_json(read_json(manifest_path));
  for (const auto& e : ds.manifest.entries) {
    int nj = 0;
    auto seq = load_motion(dir / e.motion, &nj);
    if (nj != ds.manifest.joints) throw ConfigError(e.motion + ": joint count differs from manifest");
    ds.motions.push_back(std::move(seq.frames));
  }
  return ds;
}

void save_dataset(const fs::path& dir, const MotionDataset& ds) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < ds.motions.size(); ++i) {
    save_motion(dir / ds.manifest.entries[i].motion, MotionSequence{ds.motions[i]}, ds.manifest.joints);
  }
  write_json(dir / "manifest.json", manifest_to_json(ds.manifest));
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isalnum(u)) {
      cur.push_back(static_cast<char>(std::tolower(u)));
    } else if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace mulsmo
