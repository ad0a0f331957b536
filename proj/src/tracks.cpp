#include "tpnet/tracks.hpp"

#include <algorithm>
#include <map>
#include <string>

namespace tpnet {

InteractionGraph InteractionGraph::identity(int n) {
  InteractionGraph g;
  g.n = n;
  g.adj.assign(static_cast<size_t>(n) * n, 0);
  for (int i = 0; i < n; ++i) g.set(i, i, 1);
  return g;
}

TrackSet assemble(const std::vector<Observation>& rows, double dt,
                  int max_interp_gap) {
  if (dt <= 0.0) throw InputError("assemble: dt must be positive");
  std::map<int, std::vector<Observation>> by_id;
  for (const auto& r : rows) by_id[r.id].push_back(r);

  TrackSet out;
  out.dt = dt;
  for (auto& [id, obs] : by_id) {
    std::sort(obs.begin(), obs.end(),
              [](const Observation& a, const Observation& b) { return a.frame < b.frame; });
    for (size_t i = 1; i < obs.size(); ++i) {
      if (obs[i].frame == obs[i - 1].frame)
        throw InputError("assemble: duplicate frame " + std::to_string(obs[i].frame) +
                         " for track " + std::to_string(id));
    }
    Track cur;
    cur.id = id;
    cur.segment = 0;
    cur.points.push_back({obs[0].frame, obs[0].pos});
    for (size_t i = 1; i < obs.size(); ++i) {
      const int gap = obs[i].frame - obs[i - 1].frame - 1;
      if (gap > max_interp_gap) {
        out.tracks.push_back(std::move(cur));
        cur = Track{};
        cur.id = id;
        cur.segment = out.tracks.back().segment + 1;
      } else if (gap > 0) {
        for (int g = 1; g <= gap; ++g) {
          const double a = static_cast<double>(g) / (gap + 1);
          cur.points.push_back({obs[i - 1].frame + g,
                                (1.0 - a) * obs[i - 1].pos + a * obs[i].pos});
        }
      }
      cur.points.push_back({obs[i].frame, obs[i].pos});
    }
    out.tracks.push_back(std::move(cur));
  }
  return out;
}

namespace {

const Track* find_target(const TrackSet& tracks, int target_id, int anchor_frame) {
  for (const auto& t : tracks.tracks)
    if (t.id == target_id && t.covers(anchor_frame)) return &t;
  return nullptr;
}

}  // namespace

TrajectoryWindow window(const TrackSet& tracks, int target_id, int anchor_frame,
                        int t_steps, int f_steps, double radius, int n_max) {
  if (t_steps < 1 || f_steps < 1)
    throw InputError("window: t_steps and f_steps must be positive");
  const Track* target = find_target(tracks, target_id, anchor_frame);
  if (target == nullptr)
    throw InputError("window: track " + std::to_string(target_id) +
                     " does not cover frame " + std::to_string(anchor_frame));
  const int first_needed = anchor_frame - (t_steps - 1);
  if (target->first_frame() > first_needed)
    throw InputError("window: track " + std::to_string(target_id) +
                     " lacks full history at frame " + std::to_string(anchor_frame));

  const Pos2 tp = target->at_frame(anchor_frame);
  struct Neighbor {
    double dist;
    const Track* track;
  };
  std::vector<Neighbor> near;
  for (const auto& t : tracks.tracks) {
    if (&t == target || !t.covers(anchor_frame)) continue;
    const double d = (t.at_frame(anchor_frame) - tp).norm();
    if (d <= radius) near.push_back({d, &t});
  }
  std::stable_sort(near.begin(), near.end(),
                   [](const Neighbor& a, const Neighbor& b) { return a.dist < b.dist; });
  if (static_cast<int>(near.size()) + 1 > n_max) near.resize(static_cast<size_t>(n_max - 1));

  std::vector<const Track*> members{target};
  for (const auto& nb : near) members.push_back(nb.track);

  TrajectoryWindow w;
  w.t_steps = t_steps;
  w.f_steps = f_steps;
  w.anchor_frame = anchor_frame;
  w.dt = tracks.dt;
  w.origin = tp;
  const int n = static_cast<int>(members.size());
  for (const auto* m : members) w.vehicle_ids.push_back(m->id);
  w.past.assign(static_cast<size_t>(t_steps), std::vector<Pos2>(n, Pos2::Zero()));
  w.future.assign(static_cast<size_t>(f_steps), std::vector<Pos2>(n, Pos2::Zero()));
  w.present.assign(static_cast<size_t>(t_steps + f_steps), std::vector<uint8_t>(n, 0));
  for (int v = 0; v < n; ++v) {
    const Track* m = members[static_cast<size_t>(v)];
    for (int s = 0; s < t_steps; ++s) {
      const int frame = first_needed + s;
      if (m->covers(frame)) {
        w.past[s][v] = m->at_frame(frame) - tp;
        w.present[s][v] = 1;
      }
    }
    for (int s = 0; s < f_steps; ++s) {
      const int frame = anchor_frame + 1 + s;
      if (m->covers(frame)) {
        w.future[s][v] = m->at_frame(frame) - tp;
        w.present[t_steps + s][v] = 1;
      }
    }
  }
  return w;
}

std::vector<TrajectoryWindow> windows_from_tracks(const TrackSet& tracks,
                                                  int t_steps, int f_steps,
                                                  double radius, int n_max,
                                                  int stride) {
  if (stride < 1) throw InputError("windows_from_tracks: stride must be >= 1");
  std::vector<TrajectoryWindow> out;
  for (const auto& t : tracks.tracks) {
    const int first_anchor = t.first_frame() + t_steps - 1;
    for (int anchor = first_anchor; anchor <= t.last_frame(); anchor += stride) {
      // Require at least one future frame so the sample carries a label.
      if (!t.covers(anchor + 1)) continue;
      TrajectoryWindow w = window(tracks, t.id, anchor, t_steps, f_steps, radius, n_max);
      w.window_id = static_cast<int>(out.size());
      out.push_back(std::move(w));
    }
  }
  return out;
}

InteractionGraph build_graph_at(const std::vector<Pos2>& positions,
                                const std::vector<uint8_t>& present, double d_near) {
  if (positions.size() != present.size())
    throw DimensionError("build_graph_at: positions/present size mismatch");
  const int n = static_cast<int>(positions.size());
  InteractionGraph g = InteractionGraph::identity(n);
  for (int i = 0; i < n; ++i) {
    if (!present[static_cast<size_t>(i)]) continue;
    for (int j = i + 1; j < n; ++j) {
      if (!present[static_cast<size_t>(j)]) continue;
      if ((positions[static_cast<size_t>(i)] - positions[static_cast<size_t>(j)]).norm() <= d_near) {
        g.set(i, j, 1);
        g.set(j, i, 1);
      }
    }
  }
  return g;
}

InteractionGraph build_graph(const TrajectoryWindow& w, int step, double d_near) {
  if (step < 0 || step >= w.t_steps + w.f_steps)
    throw DimensionError("build_graph: step out of range");
  const auto& pos = step < w.t_steps ? w.past[static_cast<size_t>(step)]
                                     : w.future[static_cast<size_t>(step - w.t_steps)];
  return build_graph_at(pos, w.present[static_cast<size_t>(step)], d_near);
}

ScaleSpec fit_scale(const std::vector<TrajectoryWindow>& windows) {
  double min_x = 0.0, max_x = 0.0, min_y = 0.0, max_y = 0.0;
  bool any = false;
  auto fold = [&](const Pos2& p) {
    if (!any) {
      min_x = max_x = p.x();
      min_y = max_y = p.y();
      any = true;
    } else {
      min_x = std::min(min_x, p.x());
      max_x = std::max(max_x, p.x());
      min_y = std::min(min_y, p.y());
      max_y = std::max(max_y, p.y());
    }
  };
  for (const auto& w : windows) {
    for (int s = 0; s < w.t_steps; ++s)
      for (int v = 0; v < w.num_vehicles(); ++v)
        if (w.present_past(s, v)) fold(w.past[static_cast<size_t>(s)][static_cast<size_t>(v)]);
    for (int s = 0; s < w.f_steps; ++s)
      for (int v = 0; v < w.num_vehicles(); ++v)
        if (w.present_future(s, v)) fold(w.future[static_cast<size_t>(s)][static_cast<size_t>(v)]);
  }
  if (!any) throw InputError("fit_scale: empty corpus");
  ScaleSpec s;
  s.offset_x = 0.5 * (min_x + max_x);
  s.offset_y = 0.5 * (min_y + max_y);
  const double span_x = max_x - min_x;
  const double span_y = max_y - min_y;
  s.gain_x = span_x > 1e-9 ? 2.0 / span_x : 1.0;
  s.gain_y = span_y > 1e-9 ? 2.0 / span_y : 1.0;
  return s;
}

}  // namespace tpnet
