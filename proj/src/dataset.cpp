#include "fiberloop/dataset.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <thread>

#include "fiberloop/errors.hpp"

namespace fiberloop {

namespace {

constexpr const char* kFormatLine = "fiberloop-dataset v1";

int axis_count(double lo, double hi, double step) {
  if (hi < lo) return 0;
  return static_cast<int>(std::floor((hi - lo) / step + 1e-9)) + 1;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void SweepGrid::validate() const {
  std::vector<std::string> bad;
  if (!(lx_step > 0.0) || !(ly_step > 0.0) || !(rx_step > 0.0) ||
      !(ry_step > 0.0)) {
    bad.push_back("grid steps must be > 0");
  }
  if (lx_max < lx_min || ly_max < ly_min || rx_max < rx_min ||
      ry_max < ry_min) {
    bad.push_back("grid ranges must have max >= min");
  }
  if (!bad.empty()) {
    std::string msg = "invalid SweepGrid:";
    for (const auto& b : bad) msg += " " + b + ";";
    throw InvariantViolation(msg);
  }
}

void GenConfig::validate() const {
  grid.validate();
  if (!(settle_ke_tol > 0.0)) {
    throw InvariantViolation("settle_ke_tol must be > 0");
  }
  if (settle_max_steps < 1) {
    throw InvariantViolation("settle_max_steps must be >= 1");
  }
  if (state_points < 2) {
    throw InvariantViolation("state_points must be >= 2");
  }
}

Dataset Dataset::generate(const RodParams& rod, const GenConfig& gen,
                          uint64_t seed) {
  rod.validate();
  gen.validate();

  const double lo = 0.5 * rod.total_length;
  const double hi = 0.9 * rod.total_length;

  // Enumerate admissible gripper pairs in a fixed order first so the result
  // does not depend on how the settles are scheduled across threads.
  struct Candidate {
    Vec2 l, r;
    double sep;
  };
  std::vector<Candidate> candidates;
  const SweepGrid& g = gen.grid;
  const int nlx = axis_count(g.lx_min, g.lx_max, g.lx_step);
  const int nly = axis_count(g.ly_min, g.ly_max, g.ly_step);
  const int nrx = axis_count(g.rx_min, g.rx_max, g.rx_step);
  const int nry = axis_count(g.ry_min, g.ry_max, g.ry_step);
  for (int a = 0; a < nlx; ++a) {
    for (int b = 0; b < nly; ++b) {
      const Vec2 l{g.lx_min + a * g.lx_step, g.ly_min + b * g.ly_step};
      for (int c = 0; c < nrx; ++c) {
        for (int d = 0; d < nry; ++d) {
          const Vec2 r{g.rx_min + c * g.rx_step, g.ry_min + d * g.ry_step};
          const double sep = distance(l, r);
          if (sep >= lo && sep <= hi) {
            candidates.push_back({l, r, sep});
          }
        }
      }
    }
  }

  SurfaceModel frictionless;
  std::vector<ConfigRecord> out(candidates.size() * 2);
  std::atomic<std::size_t> cursor{0};

  auto worker = [&] {
    for (;;) {
      const std::size_t i = cursor.fetch_add(1);
      if (i >= candidates.size()) return;
      const Candidate& c = candidates[i];
      GripperPair grip;
      grip.x_l = c.l;
      grip.x_r = c.r;
      for (int sign : {+1, -1}) {
        ChainState chain =
            init_chain(rod, grip, sign, stream_seed(seed, "dataset-init", i));
        SettleResult settled = settle(chain, rod, frictionless,
                                      gen.settle_ke_tol, gen.settle_max_steps);
        const Centerline full = chain_centerline(settled.state, rod);

        ConfigRecord rec;
        rec.x_l = c.l;
        rec.x_r = c.r;
        rec.buckle_sign = sign;
        rec.separation = c.sep;
        rec.bend_energy = bending_energy(full);
        rec.settled_centerline = resample(full, gen.state_points);
        out[2 * i + (sign > 0 ? 0 : 1)] = std::move(rec);
      }
    }
  };

  int n_threads = gen.n_threads > 0
                      ? gen.n_threads
                      : static_cast<int>(std::thread::hardware_concurrency());
  n_threads = std::max(1, n_threads);
  if (n_threads == 1 || candidates.size() < 2) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  Dataset ds(rod, gen);
  ds.records_ = std::move(out);
  for (std::size_t i = 0; i < ds.records_.size(); ++i) {
    ds.records_[i].id = static_cast<int64_t>(i);
  }
  return ds;
}

std::pair<const ConfigRecord*, const ConfigRecord*> Dataset::sample_pair(
    Rng& rng) const {
  if (records_.empty()) {
    throw EmptyDataset("cannot sample from an empty dataset");
  }
  const ConfigRecord* init = &records_[rng.uniform_index(records_.size())];
  const ConfigRecord* target = &records_[rng.uniform_index(records_.size())];
  return {init, target};
}

void Dataset::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open " + path + " for writing");

  f << kFormatLine << "\n";
  f << "rod n_segments " << rod_.n_segments << " total_length "
    << fmt(rod_.total_length) << " joint_stiffness "
    << fmt(rod_.joint_stiffness) << " joint_damping "
    << fmt(rod_.joint_damping) << " segment_mass " << fmt(rod_.segment_mass)
    << " physics_dt " << fmt(rod_.physics_dt) << " end_clamp "
    << (rod_.end_clamp ? 1 : 0) << " blowup_rate " << fmt(rod_.blowup_rate)
    << "\n";
  f << "gen state_points " << gen_.state_points << " settle_ke_tol "
    << fmt(gen_.settle_ke_tol) << " settle_max_steps "
    << gen_.settle_max_steps << "\n";
  f << "count " << records_.size() << "\n";
  for (const ConfigRecord& r : records_) {
    f << r.id << " " << fmt(r.x_l.x) << " " << fmt(r.x_l.y) << " "
      << fmt(r.x_r.x) << " " << fmt(r.x_r.y) << " " << r.buckle_sign << " "
      << fmt(r.separation) << " " << fmt(r.bend_energy);
    for (const Vec2& p : r.settled_centerline.points) {
      f << " " << fmt(p.x) << " " << fmt(p.y);
    }
    f << "\n";
  }
  if (!f.good()) throw IoError("write failure on " + path);
}

Dataset Dataset::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);

  std::string line;
  if (!std::getline(f, line)) throw IoError("empty dataset file " + path);
  if (line != kFormatLine) {
    throw VersionMismatch("unsupported dataset format line: '" + line + "'");
  }

  Dataset ds;
  // rod line
  if (!std::getline(f, line)) throw ParseError("missing rod header line");
  {
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag != "rod") throw ParseError("expected rod header, got: " + line);
    std::string key;
    while (ss >> key) {
      if (key == "n_segments") {
        ss >> ds.rod_.n_segments;
      } else if (key == "total_length") {
        ss >> ds.rod_.total_length;
      } else if (key == "joint_stiffness") {
        ss >> ds.rod_.joint_stiffness;
      } else if (key == "joint_damping") {
        ss >> ds.rod_.joint_damping;
      } else if (key == "segment_mass") {
        ss >> ds.rod_.segment_mass;
      } else if (key == "physics_dt") {
        ss >> ds.rod_.physics_dt;
      } else if (key == "end_clamp") {
        int v = 0;
        ss >> v;
        ds.rod_.end_clamp = v != 0;
      } else if (key == "blowup_rate") {
        ss >> ds.rod_.blowup_rate;
      } else {
        throw ParseError("unknown rod header key '" + key + "'");
      }
      if (ss.fail()) throw ParseError("bad value for rod key '" + key + "'");
    }
  }
  // gen line
  if (!std::getline(f, line)) throw ParseError("missing gen header line");
  {
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag != "gen") throw ParseError("expected gen header, got: " + line);
    std::string key;
    while (ss >> key) {
      if (key == "state_points") {
        ss >> ds.gen_.state_points;
      } else if (key == "settle_ke_tol") {
        ss >> ds.gen_.settle_ke_tol;
      } else if (key == "settle_max_steps") {
        ss >> ds.gen_.settle_max_steps;
      } else {
        throw ParseError("unknown gen header key '" + key + "'");
      }
      if (ss.fail()) throw ParseError("bad value for gen key '" + key + "'");
    }
  }
  // count line
  std::size_t count = 0;
  if (!std::getline(f, line)) throw ParseError("missing count line");
  {
    std::istringstream ss(line);
    std::string tag;
    ss >> tag >> count;
    if (tag != "count" || ss.fail()) {
      throw ParseError("expected count line, got: " + line);
    }
  }

  ds.records_.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(f, line)) {
      throw ParseError("dataset truncated at record " + std::to_string(i));
    }
    std::istringstream ss(line);
    ConfigRecord r;
    ss >> r.id >> r.x_l.x >> r.x_l.y >> r.x_r.x >> r.x_r.y >> r.buckle_sign >>
        r.separation >> r.bend_energy;
    if (ss.fail()) {
      throw ParseError("malformed record at line " + std::to_string(i + 5));
    }
    r.settled_centerline.points.resize(ds.gen_.state_points);
    for (int k = 0; k < ds.gen_.state_points; ++k) {
      ss >> r.settled_centerline.points[k].x >> r.settled_centerline.points[k].y;
    }
    if (ss.fail()) {
      throw ParseError("record " + std::to_string(r.id) +
                       " has too few centerline points");
    }
    ds.records_.push_back(std::move(r));
  }

  ds.validate();
  return ds;
}

void Dataset::validate() const {
  const double lo = 0.5 * rod_.total_length - 1e-6;
  const double hi = 0.9 * rod_.total_length + 1e-6;
  for (const ConfigRecord& r : records_) {
    const std::string who = "record " + std::to_string(r.id);
    if (r.separation < lo || r.separation > hi) {
      throw InvariantViolation(who + " violates the separation filter (" +
                               std::to_string(r.separation) + " mm)");
    }
    if (std::abs(distance(r.x_l, r.x_r) - r.separation) >
        1e-9 * rod_.total_length) {
      throw InvariantViolation(who +
                               " stored separation disagrees with endpoints");
    }
    if (static_cast<int>(r.settled_centerline.size()) != gen_.state_points) {
      throw InvariantViolation(who + " has wrong centerline point count");
    }
    if (r.buckle_sign != 1 && r.buckle_sign != -1) {
      throw InvariantViolation(who + " has invalid buckle_sign");
    }
    if (distance(r.settled_centerline.points.front(), r.x_l) > 1e-6 ||
        distance(r.settled_centerline.points.back(), r.x_r) > 1e-6) {
      throw InvariantViolation(who +
                               " centerline endpoints disagree with grippers");
    }
    for (const Vec2& p : r.settled_centerline.points) {
      if (!p.finite()) {
        throw InvariantViolation(who + " has non-finite centerline points");
      }
    }
  }
}

}  // namespace fiberloop
