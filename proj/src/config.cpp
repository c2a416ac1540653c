#include "mp2m/config.hpp"

#include <cstdio>
#include <functional>
#include <map>

#include "mp2m/errors.hpp"
#include "mp2m/serialize.hpp"

namespace mp2m {

void ModelConfig::sync(int t_obs, int t_pred) {
  encoder.t_obs = t_obs;
  denoiser.t_pred = t_pred;
  denoiser.d_cond = encoder.d_cond;
  denoiser.n_steps = diffusion_steps;
  denoiser.lambda_max = encoder.lambda_max;
  encoder.validate();
  denoiser.validate();
}

void TrainConfig::validate() const {
  if (!(adam.lr >= 0.0)) throw ArgumentError("lr must be >= 0");
  if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
  if (steps < 0) throw ArgumentError("steps must be >= 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ArgumentError("adam betas must lie in [0, 1)");
  }
  if (!(adam.eps > 0.0)) throw ArgumentError("adam eps must be positive");
}

namespace {

struct Field {
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&, bool)> get;
};

double to_double(std::string_view key, std::string_view v) {
  try {
    return parse_double(v);
  } catch (const FormatError&) {
    throw ArgumentError("config '" + std::string(key) + "': not a number: '" +
                        std::string(v) + "'");
  }
}

long long to_int(std::string_view key, std::string_view v) {
  try {
    return parse_int(v);
  } catch (const FormatError&) {
    throw ArgumentError("config '" + std::string(key) + "': not an integer: '" +
                        std::string(v) + "'");
  }
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ArgumentError("config '" + std::string(key) + "': not a boolean: '" +
                      std::string(v) + "'");
}

std::string fmt(double v, bool exact) {
  if (exact) return format_hex(v);
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

#define MP2M_INT(expr)                                                            \
  Field {                                                                         \
    [](RunConfig& c, std::string_view v) { expr = static_cast<int>(to_int(#expr, v)); }, \
        [](const RunConfig& c, bool) { return std::to_string(expr); }             \
  }
#define MP2M_DOUBLE(expr)                                                  \
  Field {                                                                  \
    [](RunConfig& c, std::string_view v) { expr = to_double(#expr, v); },  \
        [](const RunConfig& c, bool exact) { return fmt(expr, exact); }    \
  }

const std::map<std::string, Field, std::less<>>& fields() {
  static const std::map<std::string, Field, std::less<>> f = {
      {"lr", MP2M_DOUBLE(c.train.adam.lr)},
      {"adam_beta1", MP2M_DOUBLE(c.train.adam.beta1)},
      {"adam_beta2", MP2M_DOUBLE(c.train.adam.beta2)},
      {"adam_eps", MP2M_DOUBLE(c.train.adam.eps)},
      {"batch_size", MP2M_INT(c.train.batch_size)},
      {"steps", MP2M_INT(c.train.steps)},
      {"seed",
       Field{[](RunConfig& c, std::string_view v) {
               c.train.seed = static_cast<std::uint64_t>(to_int("seed", v));
             },
             [](const RunConfig& c, bool) { return std::to_string(c.train.seed); }}},
      {"grad_clip", MP2M_DOUBLE(c.train.grad_clip)},
      {"use_memory",
       Field{[](RunConfig& c, std::string_view v) { c.model.use_memory = to_bool("use_memory", v); },
             [](const RunConfig& c, bool) {
               return std::string(c.model.use_memory ? "true" : "false");
             }}},
      {"diffusion_steps", MP2M_INT(c.model.diffusion_steps)},
      {"beta_start", MP2M_DOUBLE(c.model.beta_start)},
      {"beta_end", MP2M_DOUBLE(c.model.beta_end)},
      {"d_state", MP2M_INT(c.model.encoder.d_state)},
      {"d_token", MP2M_INT(c.model.encoder.d_token)},
      {"d_cond", MP2M_INT(c.model.encoder.d_cond)},
      {"mlp_hidden", MP2M_INT(c.model.encoder.mlp_hidden)},
      {"lambda_max", MP2M_DOUBLE(c.model.encoder.lambda_max)},
      {"n_layers", MP2M_INT(c.model.denoiser.n_layers)},
      {"d_model", MP2M_INT(c.model.denoiser.d_model)},
      {"n_heads", MP2M_INT(c.model.denoiser.n_heads)},
      {"d_ff", MP2M_INT(c.model.denoiser.d_ff)},
      {"bank_k",
       Field{[](RunConfig& c, std::string_view v) {
               const long long k = to_int("bank_k", v);
               if (k < 1) throw ArgumentError("bank_k must be >= 1");
               c.bank_k = static_cast<std::size_t>(k);
             },
             [](const RunConfig& c, bool) { return std::to_string(c.bank_k); }}},
  };
  return f;
}

#undef MP2M_INT
#undef MP2M_DOUBLE

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) {
  const auto& f = fields();
  auto it = f.find(key);
  if (it == f.end()) throw ArgumentError("unknown config key '" + std::string(key) + "'");
  it->second.set(*this, value);
}

std::vector<std::pair<std::string, std::string>> RunConfig::entries(bool exact) const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [k, f] : fields()) out.emplace_back(k, f.get(*this, exact));
  return out;
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& [name, f] : fields()) out.push_back(name);
    return out;
  }();
  return k;
}

std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::size_t pos = 0, line_no = 0;
  auto trim = [](std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
      s.remove_suffix(1);
    return s;
  };
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(line_no, "expected 'key = value'");
    auto key = trim(line.substr(0, eq));
    auto value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) throw ParseError(line_no, "empty key or value");
    out.emplace_back(std::string(key), std::string(value));
  }
  return out;
}

}  // namespace mp2m
