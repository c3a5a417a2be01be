#include "lted/timing.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <ostream>
#include <queue>
#include <unordered_map>

#include <fmt/format.h>

#include "lted/errors.hpp"

namespace lted {

// ---------------------------------------------------------------------------
// DeviceConfig

DeviceConfig DeviceConfig::uniform(std::uint32_t id, double capture_interval,
                                   double alpha, double beta,
                                   std::uint32_t num_frames) {
  DeviceConfig d;
  d.id = id;
  d.num_frames = num_frames;
  d.segments = {LoadSegment{1, capture_interval, alpha, beta}};
  return d;
}

const LoadSegment& DeviceConfig::segment_for(std::uint32_t frame) const {
  auto it = std::upper_bound(
      segments.begin(), segments.end(), frame,
      [](std::uint32_t f, const LoadSegment& s) { return f < s.first_frame; });
  if (it == segments.begin()) {
    throw InternalError(fmt::format("device {}: no segment covers frame {}", id, frame));
  }
  return *std::prev(it);
}

double DeviceConfig::arrival(std::uint32_t frame) const {
  // τ is piecewise linear. The gap in front of a segment's first frame uses
  // that segment's interval.
  double start_time = 0.0;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const LoadSegment& s = segments[i];
    const bool last = i + 1 == segments.size() || frame < segments[i + 1].first_frame;
    if (last) {
      return start_time + static_cast<double>(frame - s.first_frame) * s.capture_interval;
    }
    const LoadSegment& next = segments[i + 1];
    start_time += static_cast<double>(next.first_frame - 1 - s.first_frame) *
                      s.capture_interval +
                  next.capture_interval;
  }
  return start_time;
}

void DeviceConfig::validate(const ChannelConfig& channel) const {
  auto fail = [this](const std::string& what) {
    throw ConfigError(fmt::format("device {}: {}", id, what));
  };
  if (id == 0) fail("id must be >= 1");
  if (num_frames < 1) fail("num_frames must be >= 1");
  if (segments.empty()) fail("needs at least one load segment");
  if (segments.front().first_frame != 1) fail("first segment must start at frame 1");
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const LoadSegment& s = segments[i];
    if (i > 0 && s.first_frame <= segments[i - 1].first_frame) {
      fail("segments must have strictly increasing first_frame");
    }
    if (!(std::isfinite(s.capture_interval) && s.capture_interval > 0.0)) {
      fail("capture_interval must be positive");
    }
    if (s.capture_interval + kTimeEpsilon < channel.tracking_delay) {
      fail(fmt::format(
          "capture_interval {} is below the tracking delay {} (load regime "
          "requires capture_interval >= tracking delay)",
          s.capture_interval, channel.tracking_delay));
    }
    if (!(s.alpha >= 0.0) || !(s.beta >= 0.0)) {
      fail("alpha and beta must be non-negative");
    }
  }
}

// ---------------------------------------------------------------------------
// Recursions

double waiting_local(double prev_completion, double arrival, std::uint32_t frame) {
  if (frame <= 1) return 0.0;
  return std::max(0.0, prev_completion - arrival);
}

double tracking_completion(double prev_completion, double arrival,
                           double tracking_delay, std::uint32_t frame) {
  if (frame <= 1) {
    throw PreconditionError("frame 1 must be processed by edge detection");
  }
  return std::max(prev_completion, arrival) + tracking_delay;
}

double edge_arrival_time(double prev_completion, double arrival,
                         double uplink_delay, std::uint32_t frame) {
  if (frame <= 1) return uplink_delay;
  return std::max(prev_completion, arrival) + uplink_delay;
}

void EdgeQueue::enqueue(std::uint32_t device, std::uint32_t frame, double arrival) {
  const std::pair key{device, frame};
  if (std::find(seen_.begin(), seen_.end(), key) != seen_.end()) {
    throw InternalError(
        fmt::format("edge queue: frame ({}, {}) enqueued twice", device, frame));
  }
  seen_.push_back(key);
  auto before = [](const Entry& a, const Entry& b) {
    if (a.arrival < b.arrival - kTimeEpsilon) return true;
    if (b.arrival < a.arrival - kTimeEpsilon) return false;
    return std::pair{a.device, a.frame} < std::pair{b.device, b.frame};
  };
  const Entry entry{device, frame, arrival};
  pending_.insert(std::upper_bound(pending_.begin(), pending_.end(), entry, before),
                  entry);
}

EdgeQueue::Service EdgeQueue::serve_head(std::uint32_t device, std::uint32_t frame,
                                         double detection_delay) {
  if (pending_.empty() || pending_.front().device != device ||
      pending_.front().frame != frame) {
    throw InternalError(fmt::format(
        "edge queue: frame ({}, {}) is not at the head of the queue", device, frame));
  }
  const double arrival = pending_.front().arrival;
  pending_.pop_front();
  Service s;
  if (!busy_until_) {
    s.completion = arrival + detection_delay;
    s.waiting = 0.0;
  } else {
    s.completion = std::max(arrival, *busy_until_) + detection_delay;
    s.waiting = std::max(0.0, *busy_until_ - arrival);
  }
  busy_until_ = s.completion;
  ++served_;
  return s;
}

std::size_t EdgeQueue::occupancy(double now) const noexcept {
  std::size_t n = 0;
  for (const Entry& e : pending_) {
    if (e.arrival <= now + kTimeEpsilon) ++n;
  }
  if (busy_until_ && *busy_until_ > now + kTimeEpsilon) ++n;
  return n;
}

FrameMetrics frame_metrics(const FrameTimeline& tl, double alpha, double beta) {
  FrameMetrics m;
  if (tl.action == Action::kTrack) {
    if (!tl.tracking_done) {
      throw InternalError(fmt::format("frame ({}, {}): tracked frame lacks t^T",
                                      tl.device, tl.frame));
    }
    m.handling = tl.tracking_delay;
    m.waiting = tl.waiting_local;
  } else if (tl.action == Action::kDetect) {
    if (!tl.edge_arrival || !tl.detection_done || !tl.waiting_edge) {
      throw InternalError(fmt::format(
          "frame ({}, {}): detected frame lacks edge timestamps", tl.device, tl.frame));
    }
    m.handling = tl.uplink_delay + tl.detection_delay + tl.downlink_delay;
    m.waiting = tl.waiting_local + *tl.waiting_edge;
  } else {
    throw InternalError("frame_metrics: invalid action");
  }
  m.accuracy = tl.miou;
  m.reward = m.accuracy - alpha * m.handling - beta * m.waiting;
  return m;
}

// ---------------------------------------------------------------------------
// World

void World::validate() const {
  if (devices.empty()) throw ConfigError("world needs at least one device");
  if (scenes.size() != devices.size()) {
    throw ConfigError("world needs exactly one scene per device");
  }
  scene_config.validate();
  channel.validate();
  std::vector<std::uint32_t> ids;
  for (std::size_t i = 0; i < devices.size(); ++i) {
    devices[i].validate(channel);
    ids.push_back(devices[i].id);
    if (!scenes[i] || scenes[i]->size() < devices[i].num_frames) {
      throw ConfigError(fmt::format("device {}: scene shorter than num_frames",
                                    devices[i].id));
    }
  }
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    throw ConfigError("device ids must be unique");
  }
}

World make_world(std::vector<DeviceConfig> devices, const SceneConfig& scene,
                 const ChannelConfig& channel, std::uint64_t seed) {
  World w;
  auto shared = std::make_shared<const Scene>(generate_scene(scene));
  w.scenes.assign(devices.size(), shared);
  w.devices = std::move(devices);
  w.scene_config = scene;
  w.channel = channel;
  w.seed = seed;
  return w;
}

FrameDelays frame_delays(const World& world, std::uint64_t episode,
                         const DeviceConfig& device, std::uint32_t frame) {
  RandomStream rng = RandomStream::derive(world.seed, episode, device.stream(),
                                          frame, StreamPurpose::kChannel);
  return sample_frame_delays(world.channel, rng);
}

namespace {

enum class EventKind : std::uint8_t {
  // Order matters for simultaneous events: arrivals join Q_0 before the
  // detector picks its next frame, and completions are visible to decisions.
  kEdgeArrival = 0,
  kServiceComplete = 1,
  kKeyframeComplete = 2,
  kFrameReady = 3,
};

struct Event {
  double time = 0.0;
  EventKind kind = EventKind::kFrameReady;
  std::uint32_t index = 0;  // device index, or edge index for service events
  std::uint32_t frame = 0;
};

bool precedes(const Event& a, const Event& b) {
  if (a.time < b.time - kTimeEpsilon) return true;
  if (b.time < a.time - kTimeEpsilon) return false;
  if (a.kind != b.kind) return a.kind < b.kind;
  if (a.index != b.index) return a.index < b.index;
  return a.frame < b.frame;
}

struct EventAfter {
  bool operator()(const Event& a, const Event& b) const { return precedes(b, a); }
};

class EpisodeRun {
 public:
  EpisodeRun(const World& world, std::uint64_t episode,
             std::span<Policy* const> policies)
      : world_(world), episode_(episode) {
    world.validate();
    if (policies.size() != world.devices.size()) {
      throw InputError(fmt::format("run_episode: {} policies for {} devices",
                                   policies.size(), world.devices.size()));
    }
    devices_.resize(world.devices.size());
    edges_.resize(world.shared_edge ? 1 : world.devices.size());
    for (std::size_t i = 0; i < world.devices.size(); ++i) {
      DeviceRun& d = devices_[i];
      d.cfg = &world.devices[i];
      d.scene = world.scenes[i].get();
      d.policy = policies[i];
      if (d.policy == nullptr) throw InputError("run_episode: null policy");
      d.concurrent = d.policy->concurrent_tracking();
      d.edge = world.shared_edge ? 0 : static_cast<std::uint32_t>(i);
      const std::uint32_t n = d.cfg->num_frames;
      d.timelines.resize(n);
      d.resolved.assign(n, false);
      d.detections.resize(n);
      d.delays.reserve(n);
      d.arrivals.reserve(n);
      for (std::uint32_t f = 1; f <= n; ++f) {
        d.delays.push_back(frame_delays(world, episode, *d.cfg, f));
        d.arrivals.push_back(d.cfg->arrival(f));
        FrameTimeline& tl = d.timelines[f - 1];
        tl.device = d.cfg->id;
        tl.frame = f;
        tl.arrival = d.arrivals.back();
      }
      index_of_id_[d.cfg->id] = static_cast<std::uint32_t>(i);
    }
  }

  std::vector<FrameTimeline> run() {
    for (std::size_t i = 0; i < devices_.size(); ++i) {
      devices_[i].policy->begin_episode(episode_);
      push({0.0, EventKind::kFrameReady, static_cast<std::uint32_t>(i), 1});
    }
    while (!events_.empty()) {
      const Event ev = events_.top();
      events_.pop();
      now_ = ev.time;
      switch (ev.kind) {
        case EventKind::kEdgeArrival: on_edge_arrival(ev.index, ev.frame); break;
        case EventKind::kServiceComplete: on_service_complete(ev.index); break;
        case EventKind::kKeyframeComplete: on_keyframe_complete(ev.index, ev.frame); break;
        case EventKind::kFrameReady: on_frame_ready(ev.index, ev.frame); break;
      }
    }
    std::vector<FrameTimeline> out;
    std::vector<std::uint32_t> order(devices_.size());
    for (std::uint32_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [this](auto a, auto b) {
      return devices_[a].cfg->id < devices_[b].cfg->id;
    });
    for (std::uint32_t i : order) {
      const DeviceRun& d = devices_[i];
      for (std::uint32_t f = 1; f <= d.cfg->num_frames; ++f) {
        if (!d.resolved[f - 1]) {
          throw InternalError(fmt::format("frame ({}, {}) never resolved", d.cfg->id, f));
        }
      }
      out.insert(out.end(), d.timelines.begin(), d.timelines.end());
    }
    return out;
  }

 private:
  struct DeviceRun {
    const DeviceConfig* cfg = nullptr;
    const Scene* scene = nullptr;
    Policy* policy = nullptr;
    bool concurrent = false;
    std::uint32_t edge = 0;

    std::vector<FrameTimeline> timelines;
    std::vector<bool> resolved;
    std::vector<BoxSet> detections;
    std::vector<FrameDelays> delays;
    std::vector<double> arrivals;

    double last_completion = 0.0;  // T of the previous frame
    std::uint32_t keyframe = 0;    // last keyframe usable for tracking

    // Concurrent-tracking mode only.
    bool in_flight = false;
    double tracker_free = 0.0;
    std::vector<std::uint32_t> deferred;
  };

  struct EdgeRun {
    EdgeQueue queue;
    bool in_service = false;
  };

  void push(const Event& e) { events_.push(e); }

  const FrameTruth& truth(const DeviceRun& d, std::uint32_t f) const {
    return (*d.scene)[f - 1];
  }

  std::uint32_t local_queue(const DeviceRun& d, std::uint32_t f) const {
    std::uint32_t n = 0;
    for (std::uint32_t g = 1; g <= d.cfg->num_frames; ++g) {
      if (g == f) continue;
      if (d.arrivals[g - 1] > now_ + kTimeEpsilon) break;
      const bool done = d.resolved[g - 1] &&
                        d.timelines[g - 1].completion <= now_ + kTimeEpsilon;
      if (!done) ++n;
    }
    return n;
  }

  DecisionState observe(const DeviceRun& d, std::uint32_t f) const {
    DecisionState s;
    const std::uint32_t key = d.keyframe == 0 ? 1 : d.keyframe;
    const PixelDeviation dev = pixel_deviation(truth(d, f), truth(d, key));
    s.deviation_x = dev.x;
    s.deviation_y = dev.y;
    s.frames_since_keyframe = f > key ? f - key : 1;
    s.local_queue = local_queue(d, f);
    if (world_.uses_edge_state()) {
      s.edge_queue = static_cast<std::uint32_t>(edges_[d.edge].queue.occupancy(now_));
    }
    s.uplink_rate = d.delays[f - 1].channel.uplink_rate;
    s.downlink_rate = d.delays[f - 1].channel.downlink_rate;
    return s;
  }

  Action ask(DeviceRun& d, std::uint32_t f) {
    if (f == 1) return Action::kDetect;
    const Action a = d.policy->decide(observe(d, f), f);
    if (!is_valid(a)) {
      throw InputError(fmt::format("policy '{}' returned action {} for frame ({}, {})",
                                   d.policy->name(), static_cast<int>(a), d.cfg->id, f));
    }
    return a;
  }

  void finalize(DeviceRun& d, std::uint32_t f) {
    FrameTimeline& tl = d.timelines[f - 1];
    const LoadSegment& seg = d.cfg->segment_for(f);
    const FrameMetrics m = frame_metrics(tl, seg.alpha, seg.beta);
    tl.accuracy = m.accuracy;
    tl.handling = m.handling;
    tl.waiting = m.waiting;
    tl.reward = m.reward;
    d.resolved[f - 1] = true;
    d.policy->on_frame_resolved(tl);
  }

  void fill_delays(FrameTimeline& tl, const FrameDelays& fd) {
    tl.uplink_delay = fd.channel.uplink_delay;
    tl.downlink_delay = fd.channel.downlink_delay;
    tl.detection_delay = fd.compute.detection_delay;
    tl.tracking_delay = fd.compute.tracking_delay;
  }

  double tracked_accuracy(const DeviceRun& d, std::uint32_t f, std::uint32_t key) {
    const BoxSet& key_boxes = d.detections[key - 1];
    if (key_boxes.empty()) return 0.0;  // keyframe found nothing to follow
    RandomStream rng = RandomStream::derive(world_.seed, episode_, d.cfg->stream(),
                                            f, StreamPurpose::kTracking);
    const BoxSet tracked = simulate_tracking(key_boxes, truth(d, key), truth(d, f),
                                             f - key, world_.scene_config, rng);
    return mean_iou(tracked, truth(d, f).boxes);
  }

  void start_detection(DeviceRun& d, std::uint32_t index, std::uint32_t f,
                       double prev_completion) {
    FrameTimeline& tl = d.timelines[f - 1];
    tl.action = Action::kDetect;
    fill_delays(tl, d.delays[f - 1]);
    tl.waiting_local = waiting_local(prev_completion, tl.arrival, f);
    tl.edge_arrival = edge_arrival_time(prev_completion, tl.arrival,
                                        tl.uplink_delay, f);
    RandomStream rng = RandomStream::derive(world_.seed, episode_, d.cfg->stream(),
                                            f, StreamPurpose::kDetection);
    d.detections[f - 1] = simulate_detection(truth(d, f), world_.scene_config, rng);
    tl.miou = mean_iou(d.detections[f - 1], truth(d, f).boxes);
    tl.keyframe = f;
    push({*tl.edge_arrival, EventKind::kEdgeArrival, index, f});
  }

  void on_frame_ready(std::uint32_t index, std::uint32_t f) {
    DeviceRun& d = devices_[index];
    if (d.concurrent) {
      ready_concurrent(d, index, f);
      return;
    }
    const double prev = f == 1 ? 0.0 : d.last_completion;
    const Action a = ask(d, f);
    if (a == Action::kDetect) {
      start_detection(d, index, f, prev);
      return;
    }
    FrameTimeline& tl = d.timelines[f - 1];
    tl.action = Action::kTrack;
    fill_delays(tl, d.delays[f - 1]);
    tl.waiting_local = waiting_local(prev, tl.arrival, f);
    tl.tracking_done = tracking_completion(prev, tl.arrival, tl.tracking_delay, f);
    tl.completion = *tl.tracking_done;
    tl.keyframe = d.keyframe;
    tl.miou = tracked_accuracy(d, f, d.keyframe);
    finalize(d, f);
    advance_sequential(d, index, f);
  }

  void advance_sequential(DeviceRun& d, std::uint32_t index, std::uint32_t f) {
    d.last_completion = d.timelines[f - 1].completion;
    if (f < d.cfg->num_frames) {
      const double next = std::max(d.last_completion, d.arrivals[f]);
      push({next, EventKind::kFrameReady, index, f + 1});
    }
  }

  // LTED-Paral: frames arriving while a detection is in flight are tracked
  // at once against the newest completed keyframe.
  void ready_concurrent(DeviceRun& d, std::uint32_t index, std::uint32_t f) {
    if (f < d.cfg->num_frames) {
      push({d.arrivals[f], EventKind::kFrameReady, index, f + 1});
    }
    if (f == 1) {
      d.in_flight = true;
      start_detection(d, index, f, 0.0);
      return;
    }
    if (d.in_flight) {
      if (d.keyframe == 0) {
        d.deferred.push_back(f);
      } else {
        track_concurrent(d, f, std::max(d.arrivals[f - 1], d.tracker_free));
      }
      return;
    }
    const Action a = ask(d, f);
    if (a == Action::kDetect) {
      d.in_flight = true;
      start_detection(d, index, f, d.arrivals[f - 1]);
    } else {
      track_concurrent(d, f, std::max(d.arrivals[f - 1], d.tracker_free));
    }
  }

  void track_concurrent(DeviceRun& d, std::uint32_t f, double start) {
    FrameTimeline& tl = d.timelines[f - 1];
    tl.action = Action::kTrack;
    fill_delays(tl, d.delays[f - 1]);
    tl.waiting_local = std::max(0.0, start - tl.arrival);
    tl.tracking_done = start + tl.tracking_delay;
    tl.completion = *tl.tracking_done;
    tl.keyframe = d.keyframe;
    tl.miou = tracked_accuracy(d, f, d.keyframe);
    d.tracker_free = tl.completion;
    finalize(d, f);
  }

  void on_keyframe_complete(std::uint32_t index, std::uint32_t f) {
    DeviceRun& d = devices_[index];
    d.in_flight = false;
    d.keyframe = f;
    for (std::uint32_t g : d.deferred) {
      track_concurrent(d, g, std::max({d.arrivals[g - 1], d.tracker_free, now_}));
    }
    d.deferred.clear();
  }

  void on_edge_arrival(std::uint32_t index, std::uint32_t f) {
    DeviceRun& d = devices_[index];
    EdgeRun& edge = edges_[d.edge];
    edge.queue.enqueue(d.cfg->id, f, *d.timelines[f - 1].edge_arrival);
    if (!edge.in_service) start_service(d.edge);
  }

  void start_service(std::uint32_t edge_index) {
    EdgeRun& edge = edges_[edge_index];
    const EdgeQueue::Entry head = edge.queue.pending().front();
    const std::uint32_t index = index_of_id_.at(head.device);
    DeviceRun& d = devices_[index];
    FrameTimeline& tl = d.timelines[head.frame - 1];
    const EdgeQueue::Service svc =
        edge.queue.serve_head(head.device, head.frame, tl.detection_delay);
    tl.detection_done = svc.completion;
    tl.waiting_edge = svc.waiting;
    tl.completion = svc.completion + tl.downlink_delay;
    edge.in_service = true;
    push({svc.completion, EventKind::kServiceComplete, edge_index, 0});

    finalize(d, head.frame);
    if (d.concurrent) {
      push({tl.completion, EventKind::kKeyframeComplete, index, head.frame});
    } else {
      d.keyframe = head.frame;
      advance_sequential(d, index, head.frame);
    }
  }

  void on_service_complete(std::uint32_t edge_index) {
    EdgeRun& edge = edges_[edge_index];
    edge.in_service = false;
    if (!edge.queue.pending().empty()) start_service(edge_index);
  }

  const World& world_;
  std::uint64_t episode_;
  double now_ = 0.0;
  std::vector<DeviceRun> devices_;
  std::vector<EdgeRun> edges_;
  std::unordered_map<std::uint32_t, std::uint32_t> index_of_id_;
  std::priority_queue<Event, std::vector<Event>, EventAfter> events_;
};

}  // namespace

std::vector<FrameTimeline> run_episode(const World& world, std::uint64_t episode,
                                       std::span<Policy* const> policies) {
  EpisodeRun run(world, episode, policies);
  return run.run();
}

// ---------------------------------------------------------------------------
// Export

namespace {

void put_number(std::string& line, double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  line.append(buf, res.ptr);
}

void put_optional(std::string& line, const std::optional<double>& v) {
  if (v) put_number(line, *v);
}

}  // namespace

void write_timeline_csv(std::ostream& out, std::span<const FrameTimeline> timelines) {
  out << kTimelineCsvHeader << '\n';
  std::string line;
  for (const FrameTimeline& tl : timelines) {
    line.clear();
    line += std::to_string(tl.device);
    line += ',';
    line += std::to_string(tl.frame);
    line += ',';
    line += std::to_string(to_int(tl.action));
    line += ',';
    put_number(line, tl.arrival);
    line += ',';
    put_optional(line, tl.edge_arrival);
    line += ',';
    put_optional(line, tl.tracking_done);
    line += ',';
    put_optional(line, tl.detection_done);
    line += ',';
    put_number(line, tl.completion);
    line += ',';
    put_number(line, tl.waiting_local);
    line += ',';
    put_optional(line, tl.waiting_edge);
    line += ',';
    put_number(line, tl.handling);
    line += ',';
    put_number(line, tl.waiting);
    line += ',';
    put_number(line, tl.accuracy);
    line += ',';
    put_number(line, tl.reward);
    out << line << '\n';
  }
}

Totals summarize(std::span<const FrameTimeline> timelines) {
  Totals t;
  for (const FrameTimeline& tl : timelines) {
    t.accuracy += tl.accuracy;
    t.handling += tl.handling;
    t.waiting += tl.waiting;
    t.reward += tl.reward;
    ++t.frames;
    if (tl.action == Action::kDetect) ++t.detections;
  }
  return t;
}

Totals summarize_device(std::span<const FrameTimeline> timelines, std::uint32_t device) {
  std::vector<FrameTimeline> mine;
  for (const FrameTimeline& tl : timelines) {
    if (tl.device == device) mine.push_back(tl);
  }
  return summarize(mine);
}

}  // namespace lted
