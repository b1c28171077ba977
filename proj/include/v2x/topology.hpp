#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "v2x/rng.hpp"

namespace v2x {

// Thrown when a topology cannot satisfy min_gap within the scatter window.
struct InfeasibleTopologyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Role { V2VTx, V2VRx, V2I };

// ETSI density/speed pairs: index 0 = 35 veh/km @ 250 km/h,
// 1 = 123 @ 70, 2 = 500 @ 50.
enum class DensityLevel { D35 = 0, D123 = 1, D500 = 2 };

// Target mean vehicle-to-BS distances: close 100 m, mid 500 m, far 1000 m.
enum class DistanceLevel { Close = 0, Mid = 1, Far = 2 };

inline constexpr double kDensities[3] = {35.0, 123.0, 500.0};
inline constexpr double kSpeedsKmh[3] = {250.0, 70.0, 50.0};
inline constexpr double kBsDistanceTargets[3] = {100.0, 500.0, 1000.0};

const char* to_string(Role r);
const char* to_string(DensityLevel d);
const char* to_string(DistanceLevel d);
DensityLevel density_from_string(const std::string& s);
DistanceLevel distance_from_string(const std::string& s);

struct HighwayConfig {
    double road_length = 2000.0;       // meters; x spans [-road_length/2, +road_length/2]
    int lanes_per_direction = 3;       // lanes 0..2 travel +x, 3..5 travel -x
    double lane_width = 4.0;           // meters
    double bs_x = 0.0;                 // beside the road midpoint
    double bs_y = -35.0;
    double density = 35.0;             // vehicles per km
    double speed_kmh = 250.0;          // nominal speed, paired with density
    double min_gap = 1.0;              // same-lane safety gap, meters
    bool allow_custom_pairs = false;   // permit density/speed outside the three ETSI pairs

    // mobility noise; zeroing both makes step_mobility deterministic
    double speed_noise_frac = 0.05;    // Gaussian sigma as fraction of nominal speed
    double lane_change_prob = 0.05;    // per vehicle per 100 ms step

    int num_lanes() const { return 2 * lanes_per_direction; }
    double lane_center_y(int lane) const { return lane_width * (lane + 0.5); }
    bool lane_forward(int lane) const { return lane < lanes_per_direction; }
};

// Fills in the ETSI density/speed pair for the given level.
HighwayConfig highway_config_for(DensityLevel level, const HighwayConfig& base = {});

void validate(const HighwayConfig& config);

struct Vehicle {
    int id = 0;
    double x = 0.0;      // meters along road
    int lane = 0;
    double speed = 0.0;  // m/s, current
    Role role = Role::V2I;
    int link = 0;        // V2V link index i, or V2I subchannel index m
};

struct TopologySnapshot {
    std::vector<Vehicle> vehicles;  // [Tx_0, Rx_0, Tx_1, Rx_1, ..., V2I_0, ...]
    int L = 0;
    int M = 0;
    double bs_x = 0.0;
    double bs_y = -35.0;
    double lane_width = 4.0;
    int64_t sample_id = 0;
    DensityLevel density_level = DensityLevel::D35;
    DistanceLevel distance_level = DistanceLevel::Mid;

    const Vehicle& tx(int i) const { return vehicles[2 * i]; }
    const Vehicle& rx(int i) const { return vehicles[2 * i + 1]; }
    const Vehicle& v2i(int m) const { return vehicles[2 * L + m]; }
    double vehicle_y(const Vehicle& v) const { return lane_width * (v.lane + 0.5); }
};

// Equality over the fields the CSV format persists (speed excluded).
bool persisted_equal(const TopologySnapshot& a, const TopologySnapshot& b);

enum class SamplingMode { Random = 0, Consecutive = 1, ConsecutiveBatches = 2 };

SamplingMode sampling_mode_from_string(const std::string& s);
const char* to_string(SamplingMode m);

struct DatasetSpec {
    int64_t n_samples = 15000;
    SamplingMode sampling_mode = SamplingMode::Random;
    uint64_t seed = 0;
};

struct Dataset {
    int L = 0;
    int M = 0;
    std::vector<TopologySnapshot> samples;
};

bool persisted_equal(const Dataset& a, const Dataset& b);

// Places 2L+M vehicles by a 1-D spatial Poisson process confined to a scatter
// window D = (2L+M) * (1000/density) m (clamped to the road), pairs consecutive
// V2V positions into same-lane Tx/Rx links with the Rx downstream, and shifts
// the cluster so the mean vehicle-to-BS distance approaches the level target.
// Throws if min_gap cannot be satisfied.
TopologySnapshot generate_initial_topology(const HighwayConfig& config, int L, int M,
                                           DistanceLevel distance_level, uint64_t rng_seed);

// Advances every vehicle by one control interval: x += speed*dt (direction per
// lane), speed re-drawn around nominal with bounded noise, occasional lane
// change to an adjacent same-direction lane when min_gap allows, wrap-around at
// the road ends.
TopologySnapshot step_mobility(const TopologySnapshot& snapshot, const HighwayConfig& config,
                               double dt, Rng& rng);

// Rolls one mobility trace per density level (100 ms sample interval) and
// interleaves them: sample i has density level i % 3.
Dataset generate_dataset(const HighwayConfig& base, int L, int M, const DatasetSpec& spec);

// The 3x3 evaluation grid {35,123,500} x {close,mid,far}, ordered row-major by
// density then distance; drawn from a seed stream disjoint from any dataset's.
std::vector<TopologySnapshot> test_topologies(const HighwayConfig& base, int L, int M,
                                              uint64_t seed);

// CSV with columns sample_id, vehicle_id, role, link_id, x, y, lane.
void save_dataset(const Dataset& dataset, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace v2x
