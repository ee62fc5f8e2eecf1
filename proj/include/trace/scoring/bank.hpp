#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace trace::scoring {

enum class TimeKind { diffusion_steps, flow_times };

/// Pre-drawn auxiliary normals xi_{t,r}, reused for every score evaluation.
/// Layout is [time][repeat][coordinate]; the draws for time index j come
/// from their own stream keyed by (seed, j).
struct CRNBank {
  TimeKind kind = TimeKind::flow_times;
  std::vector<double> time_set;  // step indices (as doubles) or times in (0, 1]
  int repeats = 0;
  int dim = 0;
  std::uint64_t seed = 0;
  std::vector<double> draws;

  std::size_t times() const { return time_set.size(); }
  std::size_t budget() const { return times() * static_cast<std::size_t>(repeats); }
  int step(std::size_t j) const { return static_cast<int>(time_set.at(j)); }

  /// dim x repeats block of draws for time index j.
  Eigen::Map<const Eigen::MatrixXd> block(std::size_t j) const {
    return {draws.data() + j * static_cast<std::size_t>(repeats * dim), dim, repeats};
  }

  std::uint64_t hash() const;
};

CRNBank build_bank(std::uint64_t seed, const std::vector<double>& time_set, int repeats, int dim,
                   TimeKind kind);

/// |T| step indices spread evenly over {1..T}, rounded, endpoints included.
std::vector<double> diffusion_time_grid(int count, int total_steps);
/// t_j = j / (count + 1), j = 1..count.
std::vector<double> flow_time_grid(int count);
/// Sorted U(0, 1) times from a seeded stream (the random-grid option).
std::vector<double> flow_time_random(int count, std::uint64_t seed);

nlohmann::json to_json(const CRNBank& bank);
/// Throws SchemaError if fields are missing or the stored hash does not match.
CRNBank bank_from_json(const nlohmann::json& j);

}  // namespace trace::scoring
