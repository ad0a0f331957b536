#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tpnet/errors.hpp"

namespace tpnet {

// Ego-centric ground-plane position: x lateral (right positive),
// y longitudinal (forward positive), meters.
using Pos2 = Eigen::Vector2d;

struct TrackPoint {
  int frame = 0;
  Pos2 pos = Pos2::Zero();
};

// One contiguous, gap-free segment of a vehicle's trajectory. Splitting a
// track at a long dropout produces a new segment under the same external id.
struct Track {
  int id = 0;
  int segment = 0;
  std::vector<TrackPoint> points;  // frames strictly increasing, step 1

  int first_frame() const { return points.front().frame; }
  int last_frame() const { return points.back().frame; }
  bool covers(int frame) const {
    return !points.empty() && frame >= first_frame() && frame <= last_frame();
  }
  const Pos2& at_frame(int frame) const {
    return points[static_cast<size_t>(frame - first_frame())].pos;
  }
};

struct TrackSet {
  std::vector<Track> tracks;
  double dt = 0.5;  // seconds between consecutive frames
};

// Flat observation row, the unit of the trajectory CSV.
struct Observation {
  int frame = 0;
  int id = 0;
  Pos2 pos = Pos2::Zero();
};

// Past/future arrays for one prediction sample. Index 0 is the target
// vehicle; neighbors follow in nearest-first order. Absent (step, vehicle)
// entries are zero-filled and masked out.
struct TrajectoryWindow {
  int window_id = 0;
  std::vector<int> vehicle_ids;
  int t_steps = 0;
  int f_steps = 0;
  int anchor_frame = 0;         // last observed frame
  double dt = 0.5;
  Pos2 origin = Pos2::Zero();   // target position at the anchor, meters
  // [step][vehicle], relative to `origin`; past steps 0..t_steps-1,
  // future 0..f_steps-1
  std::vector<std::vector<Pos2>> past;
  std::vector<std::vector<Pos2>> future;
  std::vector<std::vector<uint8_t>> present;  // (t_steps+f_steps) x N

  int num_vehicles() const { return static_cast<int>(vehicle_ids.size()); }
  bool present_past(int step, int v) const { return present[static_cast<size_t>(step)][static_cast<size_t>(v)] != 0; }
  bool present_future(int step, int v) const {
    return present[static_cast<size_t>(t_steps + step)][static_cast<size_t>(v)] != 0;
  }
};

// Binary symmetric adjacency over vehicles at one timestep, diagonal always 1.
struct InteractionGraph {
  int n = 0;
  std::vector<uint8_t> adj;  // row-major n x n

  static InteractionGraph identity(int n);
  uint8_t at(int i, int j) const { return adj[static_cast<size_t>(i) * n + j]; }
  void set(int i, int j, uint8_t v) { adj[static_cast<size_t>(i) * n + j] = v; }
};

// Per-axis affine map taking corpus coordinates into (-1, 1).
struct ScaleSpec {
  double offset_x = 0.0, gain_x = 1.0;
  double offset_y = 0.0, gain_y = 1.0;

  Pos2 scale(const Pos2& p) const {
    return Pos2((p.x() - offset_x) * gain_x, (p.y() - offset_y) * gain_y);
  }
  Pos2 unscale(const Pos2& p) const {
    return Pos2(p.x() / gain_x + offset_x, p.y() / gain_y + offset_y);
  }
};

// Groups rows into gap-free tracks. Gaps of at most max_interp_gap missing
// frames are filled by linear interpolation; longer gaps split the track.
// Duplicate (frame, id) rows are rejected.
TrackSet assemble(const std::vector<Observation>& rows, double dt,
                  int max_interp_gap = 2);

// Builds the sample for `target` anchored at its last-observed-frame
// `anchor_frame`: every vehicle within `radius` of the target at the anchor
// joins, nearest first, capped at n_max. The target must cover all t_steps
// past frames. Positions are stored relative to the target's anchor position
// (kept in `origin`), making windows translation-invariant.
TrajectoryWindow window(const TrackSet& tracks, int target_id, int anchor_frame,
                        int t_steps, int f_steps, double radius = 30.0,
                        int n_max = 16);

// All valid windows over every (track, anchor) pair, stride frames apart.
std::vector<TrajectoryWindow> windows_from_tracks(const TrackSet& tracks,
                                                  int t_steps, int f_steps,
                                                  double radius = 30.0,
                                                  int n_max = 16, int stride = 1);

// Adjacency at one timestep of the window (0..t_steps+f_steps-1), edges where
// pairwise distance <= d_near; absent vehicles keep only the self loop.
InteractionGraph build_graph(const TrajectoryWindow& w, int step, double d_near);

// Same thresholding over an arbitrary position set with a presence mask.
InteractionGraph build_graph_at(const std::vector<Pos2>& positions,
                                const std::vector<uint8_t>& present, double d_near);

// Fits the (-1, 1) map over every coordinate present in the windows.
ScaleSpec fit_scale(const std::vector<TrajectoryWindow>& windows);

}  // namespace tpnet
