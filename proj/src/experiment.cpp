#include "lted/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <string_view>

#include <fmt/format.h>
#include <json.hpp>
#include <yaml-cpp/yaml.h>

#include "lted/errors.hpp"

namespace lted {

std::string format_diagnostic(const std::string& file, const Diagnostic& d) {
  if (d.line > 0) return fmt::format("{}:{}:{}: {}: {}", file, d.line, d.column, d.path, d.message);
  return fmt::format("{}: {}: {}", file, d.path, d.message);
}

World ExperimentConfig::world() const {
  SceneConfig sc = scene;
  std::uint32_t frames = 0;
  for (const DeviceConfig& d : devices) frames = std::max(frames, d.num_frames);
  sc.num_frames = std::max<std::uint32_t>(frames, 2);
  World w = make_world(devices, sc, channel, seed);
  w.shared_edge = shared_edge;
  return w;
}

// ---------------------------------------------------------------------------
// Parsing

namespace {

constexpr std::string_view kLight = "light";

class Reader {
 public:
  std::vector<Diagnostic> diags;

  void error(const YAML::Node& at, const std::string& path, const std::string& message) {
    Diagnostic d{path, 0, 0, message};
    if (at.IsDefined() && !at.Mark().is_null()) {
      d.line = at.Mark().line + 1;
      d.column = at.Mark().column + 1;
    }
    diags.push_back(std::move(d));
  }

  bool is_map(const YAML::Node& n, const std::string& path) {
    if (!n.IsDefined() || n.IsNull()) return false;
    if (!n.IsMap()) {
      error(n, path, "expected a mapping");
      return false;
    }
    return true;
  }

  void allow_keys(const YAML::Node& map, const std::string& path,
                  std::initializer_list<std::string_view> keys) {
    for (const auto& kv : map) {
      const std::string key = kv.first.as<std::string>();
      if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
        error(kv.first, join(path, key), "unknown key");
      }
    }
  }

  static std::string join(const std::string& path, std::string_view key) {
    return path.empty() ? std::string(key) : fmt::format("{}.{}", path, key);
  }

  bool real(const YAML::Node& map, const std::string& path, const char* key, double& out) {
    const YAML::Node n = map[key];
    if (!n.IsDefined() || n.IsNull()) return false;
    double v = 0.0;
    if (!n.IsScalar() || !YAML::convert<double>::decode(n, v) || !std::isfinite(v)) {
      error(n, join(path, key), "expected a finite number");
      return false;
    }
    out = v;
    return true;
  }

  template <class T>
  bool integer(const YAML::Node& map, const std::string& path, const char* key, T& out,
               long long min = 0) {
    const YAML::Node n = map[key];
    if (!n.IsDefined() || n.IsNull()) return false;
    long long v = 0;
    if (!n.IsScalar() || !YAML::convert<long long>::decode(n, v)) {
      error(n, join(path, key), "expected an integer");
      return false;
    }
    if (v < min || static_cast<unsigned long long>(v) > std::numeric_limits<T>::max()) {
      error(n, join(path, key), fmt::format("must be an integer >= {}", min));
      return false;
    }
    out = static_cast<T>(v);
    return true;
  }

  bool flag(const YAML::Node& map, const std::string& path, const char* key, bool& out) {
    const YAML::Node n = map[key];
    if (!n.IsDefined() || n.IsNull()) return false;
    if (!n.IsScalar() || !YAML::convert<bool>::decode(n, out)) {
      error(n, join(path, key), "expected true or false");
      return false;
    }
    return true;
  }

  bool text(const YAML::Node& map, const std::string& path, const char* key, std::string& out) {
    const YAML::Node n = map[key];
    if (!n.IsDefined() || n.IsNull()) return false;
    if (!n.IsScalar()) {
      error(n, join(path, key), "expected a string");
      return false;
    }
    out = n.Scalar();
    return true;
  }

  /// Runs a validate() member and turns a ConfigError into a diagnostic. The
  /// message prefix "<section>.<field>:" locates the offending node.
  void check(const YAML::Node& root, const std::string& section,
             const std::function<void()>& validate) {
    try {
      validate();
    } catch (const ConfigError& e) {
      std::string message = e.what();
      std::string path = section;
      YAML::Node at = root[section];
      const std::string prefix = section + ".";
      if (message.rfind(prefix, 0) == 0) {
        const auto colon = message.find(':');
        if (colon != std::string::npos) {
          const std::string field = message.substr(prefix.size(), colon - prefix.size());
          path = section + "." + field;
          if (at.IsMap() && at[field].IsDefined()) at = at[field];
          message = message.substr(colon + 1);
          while (!message.empty() && message.front() == ' ') message.erase(0, 1);
        }
      }
      error(at.IsDefined() ? at : root, path, message);
    }
  }
};

void parse_scene(Reader& r, const YAML::Node& n, SceneConfig& s) {
  const std::string p = "scene";
  if (!r.is_map(n, p)) return;
  r.allow_keys(n, p,
               {"frame_width", "frame_height", "num_objects", "min_box_side", "max_box_side",
                "max_speed", "segment_length", "jitter_std", "detector_noise_std",
                "detector_miss_prob", "tracker_drift_std", "seed", "objects"});
  r.real(n, p, "frame_width", s.frame_width);
  r.real(n, p, "frame_height", s.frame_height);
  r.integer(n, p, "num_objects", s.num_objects);
  r.real(n, p, "min_box_side", s.min_box_side);
  r.real(n, p, "max_box_side", s.max_box_side);
  r.real(n, p, "max_speed", s.max_speed);
  r.integer(n, p, "segment_length", s.segment_length, 1);
  r.real(n, p, "jitter_std", s.jitter_std);
  r.real(n, p, "detector_noise_std", s.detector_noise_std);
  r.real(n, p, "detector_miss_prob", s.detector_miss_prob);
  r.real(n, p, "tracker_drift_std", s.tracker_drift_std);
  r.integer(n, p, "seed", s.seed);
  const YAML::Node objects = n["objects"];
  if (!objects.IsDefined() || objects.IsNull()) return;
  if (!objects.IsSequence()) {
    r.error(objects, "scene.objects", "expected a list");
    return;
  }
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const std::string op = fmt::format("scene.objects[{}]", i);
    const YAML::Node o = objects[i];
    if (!r.is_map(o, op)) continue;
    r.allow_keys(o, op, {"box", "velocity"});
    ObjectSpec spec;
    const YAML::Node box = o["box"];
    std::vector<double> corners;
    if (!box.IsSequence() || box.size() != 4 ||
        !YAML::convert<std::vector<double>>::decode(box, corners)) {
      r.error(box.IsDefined() ? box : o, op + ".box", "expected [x_min, y_min, x_max, y_max]");
      continue;
    }
    spec.initial = BoundingBox{corners[0], corners[1], corners[2], corners[3]};
    const YAML::Node vel = o["velocity"];
    if (!vel.IsSequence() || vel.size() == 0) {
      r.error(vel.IsDefined() ? vel : o, op + ".velocity", "expected a non-empty list");
      continue;
    }
    for (std::size_t j = 0; j < vel.size(); ++j) {
      const std::string vp = fmt::format("{}.velocity[{}]", op, j);
      if (!r.is_map(vel[j], vp)) continue;
      r.allow_keys(vel[j], vp, {"start_frame", "vx", "vy"});
      VelocitySegment seg;
      r.integer(vel[j], vp, "start_frame", seg.start_frame, 1);
      r.real(vel[j], vp, "vx", seg.vx);
      r.real(vel[j], vp, "vy", seg.vy);
      spec.velocity.push_back(seg);
    }
    s.objects.push_back(std::move(spec));
  }
}

void parse_channel(Reader& r, const YAML::Node& n, ChannelConfig& c) {
  const std::string p = "channel";
  if (!r.is_map(n, p)) return;
  r.allow_keys(n, p,
               {"uplink_rate_mean", "downlink_rate_mean", "rate_jitter", "frame_size_bits",
                "result_size_bits", "detection_delay", "tracking_delay", "delay_jitter"});
  r.real(n, p, "uplink_rate_mean", c.uplink_rate_mean);
  r.real(n, p, "downlink_rate_mean", c.downlink_rate_mean);
  r.real(n, p, "rate_jitter", c.rate_jitter);
  r.real(n, p, "frame_size_bits", c.frame_size_bits);
  r.real(n, p, "result_size_bits", c.result_size_bits);
  r.real(n, p, "detection_delay", c.detection_delay);
  r.real(n, p, "tracking_delay", c.tracking_delay);
  r.real(n, p, "delay_jitter", c.delay_jitter);
}

void parse_trainer(Reader& r, const YAML::Node& n, TrainerConfig& t) {
  const std::string p = "trainer";
  if (!r.is_map(n, p)) return;
  r.allow_keys(n, p,
               {"hidden", "gamma", "batch_size", "memory_capacity", "update_every",
                "target_sync_every", "epsilon_start", "epsilon_min", "epsilon_decay",
                "learning_rate", "learning_rate_decay", "learning_rate_decay_every",
                "learning_rate_schedule", "episodes", "early_stop", "early_stop_window",
                "early_stop_tolerance", "seed"});
  r.integer(n, p, "hidden", t.hidden);
  r.real(n, p, "gamma", t.gamma);
  r.integer(n, p, "batch_size", t.batch_size);
  r.integer(n, p, "memory_capacity", t.memory_capacity);
  r.integer(n, p, "update_every", t.update_every);
  r.integer(n, p, "target_sync_every", t.target_sync_every);
  r.real(n, p, "epsilon_start", t.epsilon_start);
  r.real(n, p, "epsilon_min", t.epsilon_min);
  r.real(n, p, "epsilon_decay", t.epsilon_decay);
  r.real(n, p, "learning_rate", t.learning_rate);
  r.real(n, p, "learning_rate_decay", t.learning_rate_decay);
  r.integer(n, p, "learning_rate_decay_every", t.learning_rate_decay_every);
  std::string schedule;
  if (r.text(n, p, "learning_rate_schedule", schedule)) {
    if (schedule == "once") {
      t.learning_rate_schedule = LearningRateSchedule::kOnce;
    } else if (schedule == "compound") {
      t.learning_rate_schedule = LearningRateSchedule::kCompound;
    } else {
      r.error(n["learning_rate_schedule"], "trainer.learning_rate_schedule",
              "expected 'once' or 'compound'");
    }
  }
  r.integer(n, p, "episodes", t.episodes);
  r.flag(n, p, "early_stop", t.early_stop);
  r.integer(n, p, "early_stop_window", t.early_stop_window);
  r.real(n, p, "early_stop_tolerance", t.early_stop_tolerance);
  r.integer(n, p, "seed", t.seed);
}

void parse_normalization(Reader& r, const YAML::Node& n, NormalizationConfig& c) {
  const std::string p = "normalization";
  if (!r.is_map(n, p)) return;
  r.allow_keys(n, p, {"frame_width", "frame_height", "keyframe_interval_scale", "queue_scale",
                      "rate_scale"});
  r.real(n, p, "frame_width", c.frame_width);
  r.real(n, p, "frame_height", c.frame_height);
  r.real(n, p, "keyframe_interval_scale", c.keyframe_interval_scale);
  r.real(n, p, "queue_scale", c.queue_scale);
  r.real(n, p, "rate_scale", c.rate_scale);
}

/// Reads capture_interval / alpha / beta of one operating point.
void parse_load(Reader& r, const YAML::Node& n, const std::string& p,
                const ChannelConfig& channel, LoadSegment& seg) {
  const YAML::Node ci = n["capture_interval"];
  bool light = false;
  if (!ci.IsDefined() || ci.IsNull()) {
    r.error(n, p + ".capture_interval", "missing (seconds between frames, or 'light')");
  } else if (ci.IsScalar() && ci.Scalar() == kLight) {
    light = true;
    seg.capture_interval = channel.light_load_interval();
  } else if (r.real(n, p, "capture_interval", seg.capture_interval)) {
    if (seg.capture_interval + kTimeEpsilon < channel.tracking_delay) {
      r.error(ci, p + ".capture_interval",
              fmt::format("{} s is below the tracking delay {} s; the load regimes require "
                          "the capture interval to be no smaller than the tracking time",
                          seg.capture_interval, channel.tracking_delay));
    }
  }
  seg.alpha = 0.5;
  r.real(n, p, "alpha", seg.alpha);
  const YAML::Node beta = n["beta"];
  if (light) {
    seg.beta = 0.0;
    if (beta.IsDefined() && !(beta.IsScalar() && beta.Scalar() == "/")) {
      r.real(n, p, "beta", seg.beta);
    }
  } else if (!r.real(n, p, "beta", seg.beta) && (!beta.IsDefined() || beta.IsNull())) {
    r.error(n, p + ".beta", "missing; heavy-load devices need a waiting-delay weight");
  }
  if (seg.alpha < 0.0) r.error(n["alpha"], p + ".alpha", "must be non-negative");
  if (seg.beta < 0.0) r.error(n["beta"], p + ".beta", "must be non-negative");
}

void parse_devices(Reader& r, const YAML::Node& n, const ChannelConfig& channel,
                   std::vector<DeviceConfig>& devices) {
  if (!n.IsDefined() || n.IsNull()) {
    devices = {DeviceConfig::uniform(1, 0.7, 0.5, 1.0)};
    return;
  }
  if (!n.IsSequence() || n.size() == 0) {
    r.error(n, "devices", "expected a non-empty list");
    return;
  }
  for (std::size_t i = 0; i < n.size(); ++i) {
    const std::string p = fmt::format("devices[{}]", i);
    const YAML::Node d = n[i];
    if (!r.is_map(d, p)) {
      if (!d.IsMap()) r.error(d, p, "expected a mapping");
      continue;
    }
    r.allow_keys(d, p,
                 {"id", "frames", "capture_interval", "alpha", "beta", "schedule", "stream_key"});
    DeviceConfig dev;
    dev.id = static_cast<std::uint32_t>(i + 1);
    r.integer(d, p, "id", dev.id, 1);
    r.integer(d, p, "frames", dev.num_frames, 2);
    std::uint64_t key = 0;
    if (r.integer(d, p, "stream_key", key)) dev.stream_key = key;
    const YAML::Node schedule = d["schedule"];
    if (schedule.IsDefined() && !schedule.IsNull()) {
      for (const char* k : {"capture_interval", "alpha", "beta"}) {
        if (d[k].IsDefined()) r.error(d[k], Reader::join(p, k), "not allowed together with schedule");
      }
      if (!schedule.IsSequence() || schedule.size() == 0) {
        r.error(schedule, p + ".schedule", "expected a non-empty list");
        continue;
      }
      dev.segments.clear();
      for (std::size_t j = 0; j < schedule.size(); ++j) {
        const std::string sp = fmt::format("{}.schedule[{}]", p, j);
        const YAML::Node s = schedule[j];
        if (!r.is_map(s, sp)) continue;
        r.allow_keys(s, sp, {"first_frame", "capture_interval", "alpha", "beta"});
        LoadSegment seg;
        if (!r.integer(s, sp, "first_frame", seg.first_frame, 1) && !s["first_frame"].IsDefined()) {
          r.error(s, sp + ".first_frame", "missing");
        }
        parse_load(r, s, sp, channel, seg);
        if (j == 0 && seg.first_frame != 1) {
          r.error(s["first_frame"], sp + ".first_frame", "the first segment must start at frame 1");
        }
        if (j > 0 && seg.first_frame <= dev.segments.back().first_frame) {
          r.error(s["first_frame"], sp + ".first_frame", "segments must be in increasing frame order");
        }
        if (seg.first_frame > dev.num_frames) {
          r.error(s["first_frame"], sp + ".first_frame", "starts after the device's last frame");
        }
        dev.segments.push_back(seg);
      }
    } else {
      parse_load(r, d, p, channel, dev.segments.front());
    }
    for (std::size_t j = 0; j < devices.size(); ++j) {
      if (devices[j].id == dev.id) r.error(d, p + ".id", fmt::format("duplicate device id {}", dev.id));
    }
    devices.push_back(std::move(dev));
  }
}

bool known_policy(const std::string& name) {
  const auto& names = baseline_names();
  return name == "lted-ada" || std::find(names.begin(), names.end(), name) != names.end();
}

}  // namespace

ParseResult parse_config(const std::string& text, std::optional<std::uint64_t> seed) {
  ParseResult result;
  Reader r;
  ExperimentConfig& c = result.config;
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    result.diagnostics.push_back(
        Diagnostic{"<document>", e.mark.line + 1, e.mark.column + 1, e.msg});
    return result;
  }
  if (root.IsNull() || !root.IsDefined()) root = YAML::Node(YAML::NodeType::Map);
  if (!root.IsMap()) {
    r.error(root, "<document>", "expected a mapping at the top level");
    result.diagnostics = std::move(r.diags);
    return result;
  }
  r.allow_keys(root, "",
               {"scenario", "seed", "output", "devices", "scene", "channel", "trainer",
                "normalization", "federation", "baselines", "policies", "shared_edge"});
  r.text(root, "", "scenario", c.scenario);
  r.integer(root, "", "seed", c.seed);
  if (seed) c.seed = *seed;
  std::string output;
  if (r.text(root, "", "output", output)) c.output = output;
  r.flag(root, "", "shared_edge", c.shared_edge);

  c.scene.seed = c.seed;
  c.trainer.seed = c.seed;
  parse_scene(r, root["scene"], c.scene);
  parse_channel(r, root["channel"], c.channel);
  parse_trainer(r, root["trainer"], c.trainer);
  parse_normalization(r, root["normalization"], c.normalization);
  r.check(root, "channel", [&] { c.channel.validate(); });
  parse_devices(r, root["devices"], c.channel, c.devices);

  const YAML::Node fed = root["federation"];
  if (r.is_map(fed, "federation")) {
    r.allow_keys(fed, "federation", {"sync_every", "compare_individual"});
    const YAML::Node every = fed["sync_every"];
    if (every.IsDefined() && every.IsScalar() && every.Scalar() == "none") {
      c.federation.sync_every.reset();
    } else {
      std::uint32_t k = 0;
      if (r.integer(fed, "federation", "sync_every", k)) c.federation.sync_every = k;
    }
    r.flag(fed, "federation", "compare_individual", c.compare_individual);
  }

  const YAML::Node base = root["baselines"];
  if (r.is_map(base, "baselines")) {
    r.allow_keys(base, "baselines", {"interval", "deviation_threshold", "track_probability"});
    r.integer(base, "baselines", "interval", c.baselines.interval);
    r.real(base, "baselines", "deviation_threshold", c.baselines.deviation_threshold);
    r.real(base, "baselines", "track_probability", c.baselines.track_probability);
  }

  const YAML::Node pol = root["policies"];
  if (pol.IsDefined() && !pol.IsNull()) {
    if (!pol.IsSequence()) {
      r.error(pol, "policies", "expected a list of policy names");
    } else {
      for (std::size_t i = 0; i < pol.size(); ++i) {
        const std::string name = pol[i].IsScalar() ? pol[i].Scalar() : std::string();
        if (!known_policy(name)) {
          r.error(pol[i], fmt::format("policies[{}]", i), fmt::format("unknown policy '{}'", name));
        } else {
          c.policies.push_back(name);
        }
      }
    }
  }

  r.check(root, "scene", [&] { c.scene.validate(); });
  r.check(root, "trainer", [&] { c.trainer.validate(); });
  r.check(root, "normalization", [&] { c.normalization.validate(); });
  r.check(root, "federation", [&] { c.federation.validate(); });
  r.check(root, "baselines", [&] {
    if (c.baselines.interval < 1) throw ConfigError("baselines.interval: must be >= 1");
    if (c.baselines.deviation_threshold < 0.0) {
      throw ConfigError("baselines.deviation_threshold: must be >= 0");
    }
    if (!(c.baselines.track_probability >= 0.0 && c.baselines.track_probability <= 1.0)) {
      throw ConfigError("baselines.track_probability: must lie in [0, 1]");
    }
  });
  std::stable_sort(r.diags.begin(), r.diags.end(), [](const Diagnostic& a, const Diagnostic& b) {
    return std::pair(a.line, a.column) < std::pair(b.line, b.column);
  });
  result.diagnostics = std::move(r.diags);
  return result;
}

ParseResult load_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed) {
  std::ifstream in(path);
  if (!in) throw InputError(fmt::format("cannot read config '{}'", path.string()));
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str(), seed);
}

// ---------------------------------------------------------------------------
// Running

namespace {

using Json = nlohmann::ordered_json;

struct Evaluation {
  std::string policy;
  std::vector<FrameTimeline> timelines;
};

Json totals_json(const Totals& t) {
  return Json{{"accuracy", t.accuracy}, {"handling", t.handling}, {"waiting", t.waiting},
              {"reward", t.reward},     {"frames", t.frames},     {"detections", t.detections}};
}

Json device_json(const DeviceConfig& d) {
  Json segs = Json::array();
  for (const LoadSegment& s : d.segments) {
    segs.push_back({{"first_frame", s.first_frame},
                    {"capture_interval", s.capture_interval},
                    {"alpha", s.alpha},
                    {"beta", s.beta}});
  }
  return Json{{"id", d.id}, {"frames", d.num_frames}, {"segments", segs}};
}

Json evaluation_json(const Evaluation& e, const World& world) {
  Json devices = Json::array();
  for (const DeviceConfig& d : world.devices) {
    std::vector<int> actions;
    for (const FrameTimeline& t : e.timelines) {
      if (t.device == d.id) actions.push_back(to_int(t.action));
    }
    devices.push_back({{"device", d.id},
                       {"totals", totals_json(summarize_device(e.timelines, d.id))},
                       {"decisions", actions}});
  }
  return Json{{"policy", e.policy},
              {"label", display_name(e.policy)},
              {"totals", totals_json(summarize(e.timelines))},
              {"devices", devices}};
}

Json curves_json(const std::vector<std::vector<EpisodeLog>>& logs, const World& world,
                 bool stopped_early) {
  Json devices = Json::array();
  for (std::size_t k = 0; k < logs.size(); ++k) {
    std::vector<double> avg;
    for (const EpisodeLog& l : logs[k]) avg.push_back(l.average_reward);
    devices.push_back({{"device", world.devices[k].id}, {"average_total_reward", avg}});
  }
  return Json{{"episodes", logs.empty() ? 0 : logs.front().size()},
              {"stopped_early", stopped_early},
              {"devices", devices}};
}

void write_file(const std::filesystem::path& path, const std::function<void(std::ostream&)>& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", path.string()));
  body(out);
  if (!out) throw std::runtime_error(fmt::format("failed writing '{}'", path.string()));
}

void write_timelines(const std::filesystem::path& dir, const Evaluation& e, const World& world) {
  for (const DeviceConfig& d : world.devices) {
    std::vector<FrameTimeline> rows;
    for (const FrameTimeline& t : e.timelines) {
      if (t.device == d.id) rows.push_back(t);
    }
    write_file(dir / fmt::format("timeline_{}_{}.csv", e.policy, d.id),
               [&](std::ostream& o) { write_timeline_csv(o, rows); });
  }
}

std::vector<FrameTimeline> run_baseline(const std::string& name, const ExperimentConfig& c,
                                        const World& world) {
  std::vector<std::unique_ptr<Policy>> owned;
  std::vector<Policy*> policies;
  for (const DeviceConfig& d : world.devices) {
    owned.push_back(make_baseline(name, c.baselines, c.seed, d.id));
    policies.push_back(owned.back().get());
  }
  return run_episode(world, kEvaluationEpisodeBase, policies);
}

void print_summary(std::ostream& out, const std::vector<Evaluation>& evals) {
  out << fmt::format("{:<12} {:>10} {:>12} {:>12} {:>12} {:>6}\n", "policy", "accuracy",
                     "handling", "waiting", "reward", "det");
  for (const Evaluation& e : evals) {
    const Totals t = summarize(e.timelines);
    out << fmt::format("{:<12} {:>10.3f} {:>12.3f} {:>12.3f} {:>12.3f} {:>6}\n",
                       display_name(e.policy), t.accuracy, t.handling, t.waiting, t.reward,
                       t.detections);
  }
}

Checkpoint load_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError(fmt::format("missing checkpoint '{}'", path.string()));
  return read_checkpoint(in);
}

std::filesystem::path find_checkpoint(const RunOptions& o, const std::filesystem::path& dir) {
  if (o.checkpoint) return *o.checkpoint;
  for (const char* tag : {"global", "single"}) {
    const auto p = dir / fmt::format("checkpoint_{}.json", tag);
    if (std::filesystem::exists(p)) return p;
  }
  throw InputError(fmt::format(
      "no checkpoint found in '{}' (expected checkpoint_global.json or checkpoint_single.json)",
      dir.string()));
}

class Runner {
 public:
  Runner(const RunOptions& o, ExperimentConfig c, std::ostream& out, std::ostream& err)
      : o_(o), c_(std::move(c)), out_(out), err_(err), world_(c_.world()) {
    dir_ = o.out ? *o.out : std::filesystem::path(c_.output.value_or("out"));
    if (o.policies) c_.policies = *o.policies;
  }

  int run() {
    std::filesystem::create_directories(dir_);
    report_["scenario"] = c_.scenario;
    report_["verb"] = verb_name();
    report_["seed"] = c_.seed;
    report_["evaluation_episode"] = kEvaluationEpisodeBase;
    Json devices = Json::array();
    for (const DeviceConfig& d : world_.devices) devices.push_back(device_json(d));
    report_["devices"] = devices;

    switch (o_.verb) {
      case Verb::kTrainSingle: train_single(); break;
      case Verb::kTrainFederated: train_federated_verb(); break;
      case Verb::kInfer: infer_verb(); break;
      case Verb::kCompareBaselines: compare(); break;
      case Verb::kValidate: break;
    }
    Json policies = Json::array();
    for (const Evaluation& e : evals_) {
      write_timelines(dir_, e, world_);
      policies.push_back(evaluation_json(e, world_));
    }
    report_["policies"] = policies;
    write_file(dir_ / "report.json", [&](std::ostream& s) { s << report_.dump(2) << '\n'; });
    print_summary(out_, evals_);
    out_ << "outputs written to " << dir_.string() << '\n';
    return kExitOk;
  }

 private:
  std::string verb_name() const {
    switch (o_.verb) {
      case Verb::kTrainSingle: return "train-single";
      case Verb::kTrainFederated: return "train-federated";
      case Verb::kInfer: return "infer";
      case Verb::kCompareBaselines: return "compare-baselines";
      case Verb::kValidate: return "validate";
    }
    return "";
  }

  void extra_baselines(bool all_by_default) {
    std::vector<std::string> names = c_.policies;
    if (names.empty() && all_by_default) names = baseline_names();
    for (const std::string& n : names) {
      if (n == "lted-ada") continue;
      evals_.push_back({n, run_baseline(n, c_, world_)});
    }
  }

  void save_checkpoint(const std::string& tag, const QNetwork& net, const AdamState& adam) {
    write_file(dir_ / fmt::format("checkpoint_{}.json", tag), [&](std::ostream& s) {
      write_checkpoint(s, Checkpoint{net, adam, c_.trainer.hash(), tag});
    });
  }

  void train_single() {
    const TrainingResult r = train_single_device(world_, c_.trainer, c_.normalization);
    const std::uint32_t id = world_.devices.front().id;
    write_file(dir_ / fmt::format("convergence_{}.csv", id),
               [&](std::ostream& s) { write_convergence_csv(s, r.log); });
    save_checkpoint("single", r.network, r.adam);
    report_["training"] = curves_json({r.log}, world_, r.stopped_early);
    evals_.push_back({"lted-ada", infer(r.network, world_, c_.normalization)});
    extra_baselines(false);
  }

  void train_federated_verb() {
    const FederatedResult r =
        train_federated(world_, c_.trainer, c_.normalization, c_.federation);
    for (std::size_t k = 0; k < r.logs.size(); ++k) {
      write_file(dir_ / fmt::format("convergence_{}.csv", world_.devices[k].id),
                 [&](std::ostream& s) { write_convergence_csv(s, r.logs[k]); });
    }
    save_checkpoint("global", r.global, r.device_adams.front());
    Json training = curves_json(r.logs, world_, r.stopped_early);
    training["barriers"] = r.barriers;
    evals_.push_back(
        {"lted-ada", infer_distributed(std::span(&r.global, 1), world_, c_.normalization)});
    if (c_.compare_individual) {
      FederationConfig none = c_.federation;
      none.sync_every.reset();
      const FederatedResult ind = train_federated(world_, c_.trainer, c_.normalization, none);
      for (std::size_t k = 0; k < ind.logs.size(); ++k) {
        const std::uint32_t id = world_.devices[k].id;
        write_file(dir_ / fmt::format("convergence_indiv-{}.csv", id),
                   [&](std::ostream& s) { write_convergence_csv(s, ind.logs[k]); });
        save_checkpoint(fmt::format("indiv-{}", id), ind.device_networks[k],
                        ind.device_adams[k]);
      }
      training["individual"] = curves_json(ind.logs, world_, ind.stopped_early);
      evals_.push_back({"lted-indiv",
                        infer_distributed(ind.device_networks, world_, c_.normalization)});
    }
    report_["training"] = training;
    extra_baselines(false);
  }

  void infer_verb() {
    const std::filesystem::path path = find_checkpoint(o_, dir_);
    const Checkpoint ck = load_checkpoint_file(path);
    const std::size_t features = feature_count(world_.uses_edge_state());
    if (ck.network.inputs() != features) {
      throw InputError(fmt::format("checkpoint '{}' expects {} features, this world uses {}",
                                   path.string(), ck.network.inputs(), features));
    }
    if (ck.trainer_hash != c_.trainer.hash()) {
      err_ << "warning: checkpoint was trained with different trainer settings\n";
    }
    report_["checkpoint"] = {{"path", path.filename().string()}, {"tag", ck.tag}};
    evals_.push_back({"lted-ada", infer(ck.network, world_, c_.normalization)});
    extra_baselines(false);
  }

  void compare() {
    std::vector<std::string> names = c_.policies.empty() ? baseline_names() : c_.policies;
    for (const std::string& n : names) {
      if (n == "lted-ada") {
        const Checkpoint ck = load_checkpoint_file(find_checkpoint(o_, dir_));
        evals_.push_back({n, infer(ck.network, world_, c_.normalization)});
      } else {
        evals_.push_back({n, run_baseline(n, c_, world_)});
      }
    }
  }

  const RunOptions& o_;
  ExperimentConfig c_;
  std::ostream& out_;
  std::ostream& err_;
  World world_;
  std::filesystem::path dir_;
  Json report_;
  std::vector<Evaluation> evals_;
};

}  // namespace

int run(const RunOptions& options, std::ostream& out, std::ostream& err) {
  ParseResult parsed;
  try {
    parsed = load_config(options.config, options.seed);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntimeError;
  }
  ExperimentConfig& c = parsed.config;
  if (options.policies) {
    for (const std::string& p : *options.policies) {
      if (!known_policy(p)) {
        parsed.diagnostics.push_back({"--policies", 0, 0, fmt::format("unknown policy '{}'", p)});
      }
    }
  }
  if (options.verb == Verb::kTrainSingle && c.devices.size() != 1) {
    parsed.diagnostics.push_back(
        {"devices", 0, 0, "train-single needs exactly one device; use train-federated"});
  }
  const std::string file = options.config.string();
  for (const Diagnostic& d : parsed.diagnostics) err << format_diagnostic(file, d) << '\n';
  if (!parsed.diagnostics.empty()) return kExitValidation;
  if (options.verb == Verb::kValidate) {
    out << file << ": ok\n";
    return kExitOk;
  }
  try {
    return Runner(options, std::move(c), out, err).run();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntimeError;
  }
}

}  // namespace lted
