#include "trace/scoring/bank.hpp"

#include <algorithm>
#include <cmath>

#include "trace/errors.hpp"
#include "trace/random.hpp"

namespace trace::scoring {

std::uint64_t CRNBank::hash() const {
  std::uint64_t h = fnv1a(time_set.data(), time_set.size() * sizeof(double));
  const std::int64_t shape[3] = {static_cast<std::int64_t>(times()), repeats, dim};
  h = fnv1a(shape, sizeof shape, h);
  return fnv1a(draws.data(), draws.size() * sizeof(double), h);
}

CRNBank build_bank(std::uint64_t seed, const std::vector<double>& time_set, int repeats, int dim,
                   TimeKind kind) {
  if (time_set.empty()) throw InvalidArgument("build_bank: empty time set");
  require(repeats >= 1 && dim >= 1, "build_bank: repeats and dim must be >= 1");
  for (std::size_t j = 1; j < time_set.size(); ++j)
    require(time_set[j] > time_set[j - 1], "build_bank: time set must be strictly increasing");
  if (kind == TimeKind::flow_times)
    require(time_set.front() > 0.0 && time_set.back() <= 1.0,
            "build_bank: flow times must lie in (0, 1]");
  else
    for (double t : time_set)
      require(t >= 1.0 && t == std::floor(t), "build_bank: diffusion steps must be integers >= 1");

  CRNBank bank;
  bank.kind = kind;
  bank.time_set = time_set;
  bank.repeats = repeats;
  bank.dim = dim;
  bank.seed = seed;
  const std::size_t per_time = static_cast<std::size_t>(repeats) * static_cast<std::size_t>(dim);
  bank.draws.resize(time_set.size() * per_time);
  for (std::size_t j = 0; j < time_set.size(); ++j) {
    NormalSource z(make_rng(seed, "bank", j));
    for (std::size_t i = 0; i < per_time; ++i) bank.draws[j * per_time + i] = z();
  }
  return bank;
}

std::vector<double> diffusion_time_grid(int count, int total_steps) {
  require(count >= 1 && count <= total_steps, "diffusion_time_grid: need 1 <= |T| <= T");
  std::vector<double> out(static_cast<std::size_t>(count));
  if (count == 1) {
    out[0] = std::round(0.5 * (1 + total_steps));
    return out;
  }
  for (int j = 0; j < count; ++j)
    out[static_cast<std::size_t>(j)] =
        std::round(1.0 + static_cast<double>(total_steps - 1) * j / (count - 1));
  // Rounding can only collide when |T| is close to T; nudge upward to stay strict.
  for (std::size_t j = 1; j < out.size(); ++j) out[j] = std::max(out[j], out[j - 1] + 1.0);
  require(out.back() <= total_steps, "diffusion_time_grid: grid exceeds T");
  return out;
}

std::vector<double> flow_time_grid(int count) {
  require(count >= 1, "flow_time_grid: count must be >= 1");
  std::vector<double> out(static_cast<std::size_t>(count));
  for (int j = 1; j <= count; ++j) out[static_cast<std::size_t>(j - 1)] = j / (count + 1.0);
  return out;
}

std::vector<double> flow_time_random(int count, std::uint64_t seed) {
  require(count >= 1, "flow_time_random: count must be >= 1");
  Rng rng = make_rng(seed, "flow_times");
  // (0, 1]: 1 - U[0, 1)
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> out(static_cast<std::size_t>(count));
  for (auto& t : out) t = 1.0 - u(rng);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  require(out.size() == static_cast<std::size_t>(count), "flow_time_random: duplicate draw");
  return out;
}

nlohmann::json to_json(const CRNBank& bank) {
  return {{"format", "trace-bank-v1"},
          {"kind", bank.kind == TimeKind::diffusion_steps ? "diffusion" : "flow"},
          {"seed", bank.seed},
          {"time_set", bank.time_set},
          {"repeats", bank.repeats},
          {"dim", bank.dim},
          {"hash", bank.hash()},
          {"draws", bank.draws}};
}

CRNBank bank_from_json(const nlohmann::json& j) {
  CRNBank bank;
  try {
    const auto kind = j.at("kind").get<std::string>();
    if (kind != "diffusion" && kind != "flow") throw SchemaError("bank: unknown kind '" + kind + "'");
    bank.kind = kind == "diffusion" ? TimeKind::diffusion_steps : TimeKind::flow_times;
    bank.seed = j.at("seed").get<std::uint64_t>();
    bank.time_set = j.at("time_set").get<std::vector<double>>();
    bank.repeats = j.at("repeats").get<int>();
    bank.dim = j.at("dim").get<int>();
    bank.draws = j.at("draws").get<std::vector<double>>();
    if (bank.draws.size() != bank.budget() * static_cast<std::size_t>(bank.dim))
      throw SchemaError("bank: draws do not match |T| x R x dim");
    if (j.at("hash").get<std::uint64_t>() != bank.hash())
      throw SchemaError("bank: hash mismatch, draws were modified");
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("bank: ") + e.what());
  }
  return bank;
}

}  // namespace trace::scoring
