#include "v2x/topology.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace v2x {

const char* to_string(Role r) {
    switch (r) {
        case Role::V2VTx: return "v2v-tx";
        case Role::V2VRx: return "v2v-rx";
        case Role::V2I: return "v2i";
    }
    return "?";
}

const char* to_string(DensityLevel d) {
    switch (d) {
        case DensityLevel::D35: return "35";
        case DensityLevel::D123: return "123";
        case DensityLevel::D500: return "500";
    }
    return "?";
}

const char* to_string(DistanceLevel d) {
    switch (d) {
        case DistanceLevel::Close: return "close";
        case DistanceLevel::Mid: return "mid";
        case DistanceLevel::Far: return "far";
    }
    return "?";
}

DensityLevel density_from_string(const std::string& s) {
    if (s == "35") return DensityLevel::D35;
    if (s == "123") return DensityLevel::D123;
    if (s == "500") return DensityLevel::D500;
    throw std::invalid_argument("unknown density: " + s + " (expected 35, 123, 500)");
}

DistanceLevel distance_from_string(const std::string& s) {
    if (s == "close") return DistanceLevel::Close;
    if (s == "mid") return DistanceLevel::Mid;
    if (s == "far") return DistanceLevel::Far;
    throw std::invalid_argument("unknown distance: " + s + " (expected close, mid, far)");
}

SamplingMode sampling_mode_from_string(const std::string& s) {
    if (s == "random") return SamplingMode::Random;
    if (s == "consecutive") return SamplingMode::Consecutive;
    if (s == "consecutive-batches-of-10") return SamplingMode::ConsecutiveBatches;
    throw std::runtime_error("unknown sampling mode: " + s +
                             " (expected random, consecutive, consecutive-batches-of-10)");
}

const char* to_string(SamplingMode m) {
    switch (m) {
        case SamplingMode::Random: return "random";
        case SamplingMode::Consecutive: return "consecutive";
        case SamplingMode::ConsecutiveBatches: return "consecutive-batches-of-10";
    }
    return "?";
}

HighwayConfig highway_config_for(DensityLevel level, const HighwayConfig& base) {
    HighwayConfig cfg = base;
    cfg.density = kDensities[static_cast<int>(level)];
    cfg.speed_kmh = kSpeedsKmh[static_cast<int>(level)];
    return cfg;
}

void validate(const HighwayConfig& config) {
    if (config.road_length <= 0.0) throw std::runtime_error("road_length must be positive");
    if (config.lane_width <= 0.0) throw std::runtime_error("lane_width must be positive");
    if (config.lanes_per_direction < 1)
        throw std::runtime_error("lanes_per_direction must be at least 1");
    if (config.min_gap <= 0.0) throw std::runtime_error("min_gap must be positive");
    if (config.density <= 0.0) throw std::runtime_error("density must be positive");
    if (config.speed_kmh <= 0.0) throw std::runtime_error("speed must be positive");
    if (!config.allow_custom_pairs) {
        bool ok = false;
        for (int k = 0; k < 3; ++k)
            if (config.density == kDensities[k] && config.speed_kmh == kSpeedsKmh[k]) ok = true;
        if (!ok)
            throw std::runtime_error(
                "density/speed must be one of (35,250) (123,70) (500,50); "
                "set allow_custom_pairs to override");
    }
}

namespace {

DensityLevel density_level_for(double density) {
    int best = 0;
    for (int k = 1; k < 3; ++k)
        if (std::abs(density - kDensities[k]) < std::abs(density - kDensities[best])) best = k;
    return static_cast<DensityLevel>(best);
}

// Sorted positions of `count` uniform points in [0, window] conditioned on all
// consecutive gaps >= gap. Sampling uniforms in the shrunk window and adding
// back i*gap draws from exactly that conditional law, without rejection.
std::vector<double> sample_gapped_positions(Rng& rng, int count, double window, double gap) {
    double slack = window - (count - 1) * gap;
    if (count > 1 && slack <= 0.0)
        throw InfeasibleTopologyError(
            "cannot place " + std::to_string(count) + " vehicles with min_gap " +
            std::to_string(gap) + " m inside a " + std::to_string(window) + " m window");
    std::vector<double> xs(count);
    for (int i = 0; i < count; ++i) xs[i] = rng.uniform(0.0, count > 1 ? slack : window);
    std::sort(xs.begin(), xs.end());
    for (int i = 0; i < count; ++i) xs[i] += i * gap;
    return xs;
}

bool lane_gap_ok(const std::vector<Vehicle>& placed, int lane, double x, double min_gap) {
    for (const auto& v : placed)
        if (v.lane == lane && std::abs(v.x - x) < min_gap) return false;
    return true;
}

double mean_bs_distance(const std::vector<Vehicle>& vehicles, const HighwayConfig& config,
                        double shift) {
    double total = 0.0;
    for (const auto& v : vehicles) {
        double dy = config.lane_center_y(v.lane) - config.bs_y;
        total += std::hypot(v.x + shift, dy);
    }
    return total / vehicles.size();
}

// The mean BS distance is convex in the cluster shift, so locate its minimum
// on the non-negative side, then bisect the increasing branch for the target.
double solve_cluster_shift(const std::vector<Vehicle>& vehicles, const HighwayConfig& config,
                           double target, double t_lo, double t_hi) {
    auto f = [&](double t) { return mean_bs_distance(vehicles, config, t); };
    double a = std::clamp(0.0, t_lo, t_hi);
    double b = t_hi;
    if (a > b) std::swap(a, b);
    double lo = a, hi = b;
    for (int it = 0; it < 120; ++it) {
        double m1 = lo + (hi - lo) / 3.0;
        double m2 = hi - (hi - lo) / 3.0;
        if (f(m1) < f(m2)) hi = m2; else lo = m1;
    }
    double t_min = 0.5 * (lo + hi);
    if (f(t_min) >= target) return t_min;
    if (f(b) <= target) return b;
    lo = t_min;
    hi = b;
    for (int it = 0; it < 100; ++it) {
        double m = 0.5 * (lo + hi);
        (f(m) < target ? lo : hi) = m;
    }
    return 0.5 * (lo + hi);
}

}  // namespace

TopologySnapshot generate_initial_topology(const HighwayConfig& config, int L, int M,
                                           DistanceLevel distance_level, uint64_t rng_seed) {
    validate(config);
    if (L < 1) throw std::runtime_error("need at least one V2V link");
    if (M < 0) throw std::runtime_error("negative V2I link count");

    const int n = 2 * L + M;
    const int lanes = config.num_lanes();
    double window = std::min(n * (1000.0 / config.density), config.road_length);

    Rng rng(rng_seed);
    std::vector<double> xs = sample_gapped_positions(rng, 2 * L, window, config.min_gap);

    TopologySnapshot snap;
    snap.L = L;
    snap.M = M;
    snap.bs_x = config.bs_x;
    snap.bs_y = config.bs_y;
    snap.lane_width = config.lane_width;
    snap.density_level = density_level_for(config.density);
    snap.distance_level = distance_level;

    const double speed = config.speed_kmh / 3.6;
    constexpr int kMaxAttempts = 100000;

    for (int i = 0; i < L; ++i) {
        double xa = xs[2 * i];
        double xb = xs[2 * i + 1];
        int lane = -1;
        for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
            int candidate = rng.uniform_int(lanes);
            if (lane_gap_ok(snap.vehicles, candidate, xa, config.min_gap) &&
                lane_gap_ok(snap.vehicles, candidate, xb, config.min_gap)) {
                lane = candidate;
                break;
            }
        }
        if (lane < 0)
            throw InfeasibleTopologyError("no lane satisfies min_gap for V2V pair " +
                                          std::to_string(i));
        // Rx sits downstream of Tx in the lane's travel direction.
        double tx_x = config.lane_forward(lane) ? xa : xb;
        double rx_x = config.lane_forward(lane) ? xb : xa;
        snap.vehicles.push_back({2 * i, tx_x, lane, speed, Role::V2VTx, i});
        snap.vehicles.push_back({2 * i + 1, rx_x, lane, speed, Role::V2VRx, i});
    }

    for (int m = 0; m < M; ++m) {
        bool placed = false;
        for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
            double x = rng.uniform(0.0, window);
            int lane = rng.uniform_int(lanes);
            if (lane_gap_ok(snap.vehicles, lane, x, config.min_gap)) {
                snap.vehicles.push_back({2 * L + m, x, lane, speed, Role::V2I, m});
                placed = true;
            }
        }
        if (!placed)
            throw InfeasibleTopologyError("cannot place V2I vehicle " + std::to_string(m) +
                                          " with min_gap " + std::to_string(config.min_gap));
    }

    // Center the cluster, then shift it so the mean vehicle-to-BS distance
    // approaches the level target (clamped to keep every vehicle on the road).
    for (auto& v : snap.vehicles) v.x -= window / 2.0;
    double t_lo = -config.road_length / 2.0 + window / 2.0 - config.bs_x;
    double t_hi = config.road_length / 2.0 - window / 2.0 - config.bs_x;
    double target = kBsDistanceTargets[static_cast<int>(distance_level)];
    double shift = solve_cluster_shift(snap.vehicles, config, target, t_lo, t_hi);
    for (auto& v : snap.vehicles) v.x += config.bs_x + shift;

    return snap;
}

TopologySnapshot step_mobility(const TopologySnapshot& snapshot, const HighwayConfig& config,
                               double dt, Rng& rng) {
    if (dt == 0.0) return snapshot;
    if (dt < 0.0) throw std::runtime_error("negative mobility step");

    TopologySnapshot next = snapshot;
    const double nominal = config.speed_kmh / 3.6;
    const double half = config.road_length / 2.0;

    for (auto& v : next.vehicles) {
        double speed = v.speed;
        if (config.speed_noise_frac > 0.0) {
            speed = nominal * (1.0 + rng.normal(0.0, config.speed_noise_frac));
            speed = std::clamp(speed, 0.8 * nominal, 1.2 * nominal);
        }
        v.speed = speed;
        v.x += (config.lane_forward(v.lane) ? speed : -speed) * dt;
        if (v.x > half) v.x -= config.road_length;
        if (v.x < -half) v.x += config.road_length;
    }

    if (config.lane_change_prob > 0.0) {
        const int per_dir = config.lanes_per_direction;
        for (auto& v : next.vehicles) {
            if (rng.uniform() >= config.lane_change_prob) continue;
            int block = v.lane / per_dir;
            int lo = block * per_dir;
            int hi = lo + per_dir - 1;
            int candidates[2];
            int count = 0;
            if (v.lane - 1 >= lo) candidates[count++] = v.lane - 1;
            if (v.lane + 1 <= hi) candidates[count++] = v.lane + 1;
            if (count == 0) continue;
            int target = candidates[count == 1 ? 0 : rng.uniform_int(2)];
            bool ok = true;
            for (const auto& u : next.vehicles)
                if (u.id != v.id && u.lane == target && std::abs(u.x - v.x) < config.min_gap) {
                    ok = false;
                    break;
                }
            if (ok) v.lane = target;
        }
    }
    return next;
}

Dataset generate_dataset(const HighwayConfig& base, int L, int M, const DatasetSpec& spec) {
    if (spec.n_samples <= 0) throw std::runtime_error("n_samples must be positive");

    Dataset ds;
    ds.L = L;
    ds.M = M;

    int64_t counts[3];
    for (int k = 0; k < 3; ++k)
        counts[k] = spec.n_samples / 3 + (k < spec.n_samples % 3 ? 1 : 0);

    std::vector<std::vector<TopologySnapshot>> rollouts(3);
    for (int k = 0; k < 3; ++k) {
        HighwayConfig cfg = highway_config_for(static_cast<DensityLevel>(k), base);
        TopologySnapshot topo = generate_initial_topology(cfg, L, M, DistanceLevel::Mid,
                                                          derive_seed(spec.seed, 101 + k));
        Rng rng(derive_seed(spec.seed, 201 + k));
        rollouts[k].reserve(counts[k]);
        for (int64_t j = 0; j < counts[k]; ++j) {
            if (j > 0) topo = step_mobility(topo, cfg, 0.1, rng);
            rollouts[k].push_back(topo);
        }
    }

    ds.samples.reserve(spec.n_samples);
    for (int64_t i = 0; i < spec.n_samples; ++i) {
        TopologySnapshot s = rollouts[i % 3][i / 3];
        s.sample_id = i;
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

std::vector<TopologySnapshot> test_topologies(const HighwayConfig& base, int L, int M,
                                              uint64_t seed) {
    std::vector<TopologySnapshot> grid;
    grid.reserve(9);
    for (int d = 0; d < 3; ++d) {
        HighwayConfig cfg = highway_config_for(static_cast<DensityLevel>(d), base);
        for (int t = 0; t < 3; ++t) {
            TopologySnapshot snap =
                generate_initial_topology(cfg, L, M, static_cast<DistanceLevel>(t),
                                          derive_seed(seed, 0x7E570000ULL + 3 * d + t));
            snap.sample_id = 3 * d + t;
            grid.push_back(std::move(snap));
        }
    }
    return grid;
}

namespace {

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct CsvError {
    static std::runtime_error at(const std::string& what, int64_t line, int64_t offset) {
        return std::runtime_error("dataset parse error at line " + std::to_string(line) +
                                  " (byte offset " + std::to_string(offset) + "): " + what);
    }
};

}  // namespace

void save_dataset(const Dataset& dataset, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "sample_id,vehicle_id,role,link_id,x,y,lane\n";
    for (const auto& s : dataset.samples) {
        for (const auto& v : s.vehicles) {
            out << s.sample_id << ',' << v.id << ',' << to_string(v.role) << ',' << v.link << ','
                << format_double(v.x) << ',' << format_double(s.vehicle_y(v)) << ',' << v.lane
                << '\n';
        }
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset: " + path);

    Dataset ds;
    std::string line;
    int64_t lineno = 0;
    int64_t offset = 0;

    if (!std::getline(in, line))
        throw CsvError::at("empty file, expected header", 1, 0);
    ++lineno;
    if (line != "sample_id,vehicle_id,role,link_id,x,y,lane")
        throw CsvError::at("bad header: " + line, lineno, offset);
    offset += static_cast<int64_t>(line.size()) + 1;

    TopologySnapshot current;
    bool have_sample = false;
    int64_t expected_vehicles = -1;
    double lane_width = 0.0;

    auto finalize = [&](int64_t at_line, int64_t at_offset) {
        int n = static_cast<int>(current.vehicles.size());
        int L = 0, M = 0;
        for (const auto& v : current.vehicles) {
            if (v.role == Role::V2VTx) ++L;
            if (v.role == Role::V2I) ++M;
        }
        if (n != 2 * L + M)
            throw CsvError::at("sample " + std::to_string(current.sample_id) +
                                   " is not a valid tx/rx/v2i sequence",
                               at_line, at_offset);
        if (expected_vehicles < 0) expected_vehicles = n;
        if (n != expected_vehicles)
            throw CsvError::at("sample " + std::to_string(current.sample_id) + " has " +
                                   std::to_string(n) + " vehicles, expected " +
                                   std::to_string(expected_vehicles) + " (truncated file?)",
                               at_line, at_offset);
        for (int i = 0; i < L; ++i) {
            if (current.vehicles[2 * i].role != Role::V2VTx ||
                current.vehicles[2 * i].link != i ||
                current.vehicles[2 * i + 1].role != Role::V2VRx ||
                current.vehicles[2 * i + 1].link != i)
                throw CsvError::at("sample " + std::to_string(current.sample_id) +
                                       ": V2V pair " + std::to_string(i) + " out of order",
                                   at_line, at_offset);
        }
        for (int m = 0; m < M; ++m)
            if (current.vehicles[2 * L + m].role != Role::V2I ||
                current.vehicles[2 * L + m].link != m)
                throw CsvError::at("sample " + std::to_string(current.sample_id) +
                                       ": V2I entry " + std::to_string(m) + " out of order",
                                   at_line, at_offset);
        current.L = L;
        current.M = M;
        current.lane_width = lane_width;
        current.density_level = static_cast<DensityLevel>(current.sample_id % 3);
        current.distance_level = DistanceLevel::Mid;
        double nominal = kSpeedsKmh[static_cast<int>(current.density_level)] / 3.6;
        for (auto& v : current.vehicles) v.speed = nominal;
        if (ds.samples.empty()) {
            ds.L = L;
            ds.M = M;
        }
        ds.samples.push_back(current);
        current = TopologySnapshot{};
    };

    while (std::getline(in, line)) {
        ++lineno;
        int64_t line_offset = offset;
        offset += static_cast<int64_t>(line.size()) + 1;
        if (line.empty()) continue;

        std::string fields[7];
        int nf = 0;
        size_t start = 0;
        for (size_t i = 0; i <= line.size(); ++i) {
            if (i == line.size() || line[i] == ',') {
                if (nf >= 7)
                    throw CsvError::at("too many fields", lineno, line_offset);
                fields[nf++] = line.substr(start, i - start);
                start = i + 1;
            }
        }
        if (nf != 7)
            throw CsvError::at("expected 7 fields, got " + std::to_string(nf), lineno,
                               line_offset);

        Vehicle v;
        int64_t sample_id = 0;
        double y = 0.0;
        try {
            size_t pos = 0;
            sample_id = std::stoll(fields[0], &pos);
            if (pos != fields[0].size()) throw std::invalid_argument(fields[0]);
            v.id = std::stoi(fields[1], &pos);
            if (pos != fields[1].size()) throw std::invalid_argument(fields[1]);
            v.link = std::stoi(fields[3], &pos);
            if (pos != fields[3].size()) throw std::invalid_argument(fields[3]);
            v.x = std::stod(fields[4], &pos);
            if (pos != fields[4].size()) throw std::invalid_argument(fields[4]);
            y = std::stod(fields[5], &pos);
            if (pos != fields[5].size()) throw std::invalid_argument(fields[5]);
            v.lane = std::stoi(fields[6], &pos);
            if (pos != fields[6].size()) throw std::invalid_argument(fields[6]);
        } catch (const std::exception&) {
            throw CsvError::at("malformed numeric field in: " + line, lineno, line_offset);
        }

        if (fields[2] == "v2v-tx") v.role = Role::V2VTx;
        else if (fields[2] == "v2v-rx") v.role = Role::V2VRx;
        else if (fields[2] == "v2i") v.role = Role::V2I;
        else throw CsvError::at("unknown role: " + fields[2], lineno, line_offset);

        if (v.lane < 0) throw CsvError::at("negative lane", lineno, line_offset);

        if (!have_sample) {
            have_sample = true;
            current.sample_id = sample_id;
            lane_width = y / (v.lane + 0.5);
        } else if (sample_id != current.sample_id) {
            if (sample_id != current.sample_id + 1)
                throw CsvError::at("sample ids must be contiguous; jumped from " +
                                       std::to_string(current.sample_id) + " to " +
                                       std::to_string(sample_id),
                                   lineno, line_offset);
            finalize(lineno, line_offset);
            current.sample_id = sample_id;
        }

        if (v.id != static_cast<int>(current.vehicles.size()))
            throw CsvError::at("vehicle ids must be 0..n-1 in order within a sample; got " +
                                   std::to_string(v.id),
                               lineno, line_offset);
        if (std::abs(y - lane_width * (v.lane + 0.5)) > 1e-9 * std::max(1.0, std::abs(y)))
            throw CsvError::at("y does not match lane center for lane " + std::to_string(v.lane),
                               lineno, line_offset);
        current.vehicles.push_back(v);
    }

    if (have_sample) finalize(lineno + 1, offset);
    return ds;
}

bool persisted_equal(const TopologySnapshot& a, const TopologySnapshot& b) {
    if (a.sample_id != b.sample_id || a.L != b.L || a.M != b.M) return false;
    if (a.vehicles.size() != b.vehicles.size()) return false;
    for (size_t i = 0; i < a.vehicles.size(); ++i) {
        const Vehicle& u = a.vehicles[i];
        const Vehicle& v = b.vehicles[i];
        if (u.id != v.id || u.x != v.x || u.lane != v.lane || u.role != v.role ||
            u.link != v.link)
            return false;
    }
    return true;
}

bool persisted_equal(const Dataset& a, const Dataset& b) {
    if (a.L != b.L || a.M != b.M || a.samples.size() != b.samples.size()) return false;
    for (size_t i = 0; i < a.samples.size(); ++i)
        if (!persisted_equal(a.samples[i], b.samples[i])) return false;
    return true;
}

}  // namespace v2x
