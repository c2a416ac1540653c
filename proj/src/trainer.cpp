#include "mp2m/trainer.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "mp2m/errors.hpp"
#include "mp2m/serialize.hpp"

namespace mp2m {

// ---- model ----------------------------------------------------------------

TrajectoryModel::TrajectoryModel(const ModelConfig& config)
    : config_(config),
      encoder_(config.encoder),
      denoiser_(config.denoiser),
      schedule_(make_schedule(config.diffusion_steps, config.beta_start, config.beta_end)) {}

void TrajectoryModel::init_params(Rng& rng) {
  params_ = ad::ParamStore();
  encoder_.init_params(params_, rng);
  denoiser_.init_params(params_, rng);
}

ad::Var TrajectoryModel::condition(ad::Graph& g, std::span<const Trajectory> observed,
                                   std::span<const Vec2> targets) {
  if (observed.size() != targets.size()) {
    throw ArgumentError("condition: one target per observed window is required");
  }
  ad::Var state = encoder_.encode_motion_state(g, params_, motion_features(observed));
  ad::Var token = encoder_.target_token(g, params_, targets);
  return encoder_.build_condition(g, params_, state, token);
}

ad::Var TrajectoryModel::condition_without_memory(ad::Graph& g,
                                                  std::span<const Trajectory> observed,
                                                  ad::Var* endpoint) {
  ad::Var state = encoder_.encode_motion_state(g, params_, motion_features(observed));
  ad::Var end = encoder_.predict_endpoint(g, params_, state);
  // The token embeds the head's current prediction as a constant; the head
  // itself learns from the endpoint regression loss only.
  std::vector<Vec2> targets(observed.size());
  for (std::size_t b = 0; b < targets.size(); ++b) {
    targets[b] = {end.value()(b, 0), end.value()(b, 1)};
  }
  ad::Var token = encoder_.target_token(g, params_, targets);
  if (endpoint) *endpoint = end;
  return encoder_.build_condition(g, params_, state, token);
}

EpsModel TrajectoryModel::eps_model() { return denoiser_.bind(params_); }

std::unique_ptr<TrajectoryModel> load_model(const Checkpoint& ckpt) {
  auto model = std::make_unique<TrajectoryModel>(ckpt.config.model);
  if (ckpt.kind != "diffusion") {
    throw StateError("checkpoint of kind '" + ckpt.kind + "' has no model parameters");
  }
  model->params() = ckpt.params;
  model->params().zero_grad();
  return model;
}

// ---- Adam -----------------------------------------------------------------

void adam_update(std::span<double> w, std::span<const double> g, std::span<double> m,
                 std::span<double> v, const AdamHyper& hyper, long long t) {
  if (g.size() != w.size() || m.size() != w.size() || v.size() != w.size()) {
    throw ArgumentError("adam_update: parameter, gradient and moment sizes differ");
  }
  if (t < 1) throw ArgumentError("adam_update: step must be >= 1");
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < w.size(); ++i) {
    m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
    v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    w[i] -= hyper.lr * mhat / (std::sqrt(vhat) + hyper.eps);
  }
}

void adam_step(ad::ParamStore& params, AdamState& state, const AdamHyper& hyper) {
  ++state.t;
  for (auto& [name, p] : params) {
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.shape() != p.value.shape()) m = ad::Tensor(p.value.shape());
    if (v.shape() != p.value.shape()) v = ad::Tensor(p.value.shape());
    adam_update(p.value.data(), p.grad.data(), m.data(), v.data(), hyper, state.t);
  }
}

double clip_grad_norm(ad::ParamStore& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, p] : params)
    for (double g : p.grad.values()) sq += g * g;
  const double n = std::sqrt(sq);
  if (max_norm > 0.0 && n > max_norm) {
    const double f = max_norm / n;
    for (auto& [name, p] : params)
      for (double& g : p.grad.values()) g *= f;
  }
  return n;
}

// ---- checkpoints ----------------------------------------------------------

namespace {

ad::ParamStore moments_store(const std::map<std::string, ad::Tensor>& m) {
  ad::ParamStore s;
  for (const auto& [name, t] : m) s.add(name, t);
  return s;
}

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  std::ostringstream os;
  os << "mp2m-ckpt v1\n";
  os << "kind " << ckpt.kind << "\n";
  os << "step " << ckpt.step << "\n";
  char hash[32];
  std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(ckpt.bank_hash));
  os << "bank_hash " << hash << "\n";
  os << "t_obs " << ckpt.t_obs << "\n";
  os << "t_pred " << ckpt.t_pred << "\n";
  const auto entries = ckpt.config.entries(true);
  os << "config " << entries.size() << "\n";
  for (const auto& [k, v] : entries) os << k << " " << v << "\n";
  os << "rng " << (ckpt.rng_state.empty() ? Rng(0).serialize() : ckpt.rng_state) << "\n";
  ckpt.params.write(os);
  os << "adam_t " << ckpt.adam.t << "\n";
  moments_store(ckpt.adam.m).write(os);
  moments_store(ckpt.adam.v).write(os);
  out << os.str();
}

Checkpoint read_checkpoint(std::istream& in) {
  Checkpoint ckpt;
  RecordReader r(in, "checkpoint");
  r.expect_header("mp2m-ckpt", "v1");
  try {
    ckpt.kind = std::string(r.expect_key("kind", 1)[0]);
    if (ckpt.kind != "diffusion" && ckpt.kind != "oracle") {
      r.fail("unknown checkpoint kind '" + ckpt.kind + "'");
    }
    ckpt.step = parse_int(r.expect_key("step", 1)[0]);
    const std::string hash(r.expect_key("bank_hash", 1)[0]);
    char* end = nullptr;
    ckpt.bank_hash = std::strtoull(hash.c_str(), &end, 16);
    if (hash.empty() || *end != '\0') r.fail("bad bank hash");
    ckpt.t_obs = static_cast<int>(parse_int(r.expect_key("t_obs", 1)[0]));
    ckpt.t_pred = static_cast<int>(parse_int(r.expect_key("t_pred", 1)[0]));
    const long long n = parse_int(r.expect_key("config", 1)[0]);
    for (long long i = 0; i < n; ++i) {
      auto kv = r.expect_line();
      if (kv.size() != 2) r.fail("expected '<key> <value>'");
      ckpt.config.set(kv[0], kv[1]);
    }
    ckpt.config.model.sync(ckpt.t_obs, ckpt.t_pred);
    auto rng = r.expect_line();
    if (rng[0] != "rng" || rng.size() < 2) r.fail("expected generator state");
    std::string state;
    for (std::size_t i = 1; i < rng.size(); ++i) {
      if (i > 1) state += ' ';
      state += rng[i];
    }
    Rng::deserialize(state);
    ckpt.rng_state = state;
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    r.fail(e.what());
  }

  if (ckpt.kind == "diffusion") {
    TrajectoryModel shape_ref(ckpt.config.model);
    Rng dummy(0);
    shape_ref.init_params(dummy);
    ckpt.params = ad::ParamStore::read(in, &shape_ref.params());
  } else {
    ckpt.params = ad::ParamStore::read(in);
  }
  RecordReader r2(in, "checkpoint");
  try {
    ckpt.adam.t = parse_int(r2.expect_key("adam_t", 1)[0]);
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    r2.fail(e.what());
  }
  for (auto* moments : {&ckpt.adam.m, &ckpt.adam.v}) {
    const auto store = ad::ParamStore::read(in);
    for (const auto& [name, p] : store) {
      if (!ckpt.params.contains(name) || ckpt.params.at(name).value.shape() != p.value.shape()) {
        throw FormatError("checkpoint: Adam moment '" + name + "' does not match a parameter");
      }
      (*moments)[name] = p.value;
    }
  }
  std::vector<std::string_view> extra;
  if (r2.next(extra)) r2.fail("trailing data");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  write_checkpoint(f, ckpt);
  if (!f) throw DataError("write to '" + path + "' failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "'");
  return read_checkpoint(f);
}

Checkpoint make_oracle_checkpoint(const MemoryBank& bank) {
  Checkpoint c;
  c.kind = "oracle";
  c.t_obs = bank.t_obs;
  c.t_pred = bank.t_pred;
  c.bank_hash = bank_hash(bank);
  c.config.model.sync(bank.t_obs, bank.t_pred);
  c.rng_state = Rng(0).serialize();
  return c;
}

// ---- training -------------------------------------------------------------

void Trainer::prepare(std::span<const Sample> train_set, const MemoryBank& bank) {
  if (train_set.empty()) throw StateError("training set is empty");
  if (bank.size() == 0) throw StateError("memory bank is empty");
  t_obs_ = bank.t_obs;
  t_pred_ = bank.t_pred;
  for (const auto& s : train_set) {
    if (static_cast<int>(s.t_obs()) != t_obs_ || static_cast<int>(s.t_pred()) != t_pred_) {
      throw StateError("training windows (" + std::to_string(s.t_obs()) + ", " +
                       std::to_string(s.t_pred()) + ") do not match the bank (" +
                       std::to_string(t_obs_) + ", " + std::to_string(t_pred_) + ")");
    }
    const Sample n = normalize(s).first;
    observed_.push_back(n.observed);
    for (const auto& p : n.future) {
      futures_.push_back(p.x);
      futures_.push_back(p.y);
    }
    endpoints_.push_back(n.future.back());
    priors_.push_back(address(bank, n.observed).target.mean);
  }
  bank_hash_ = bank_hash(bank);
}

Trainer::Trainer(std::span<const Sample> train_set, const MemoryBank& bank,
                 const RunConfig& config)
    : config_(config), rng_(config.train.seed) {
  config_.train.validate();
  prepare(train_set, bank);
  config_.model.sync(t_obs_, t_pred_);
  model_ = std::make_unique<TrajectoryModel>(config_.model);
  Rng init = Rng::stream(config_.train.seed, {0x1417});
  model_->init_params(init);
}

Trainer::Trainer(std::span<const Sample> train_set, const MemoryBank& bank,
                 const Checkpoint& resume)
    : config_(resume.config), rng_(Rng::deserialize(resume.rng_state)), step_(resume.step) {
  if (resume.kind != "diffusion") throw StateError("cannot resume an oracle checkpoint");
  config_.train.validate();
  prepare(train_set, bank);
  if (bank_hash_ != resume.bank_hash) {
    throw StateError("checkpoint was trained against a different memory bank");
  }
  config_.model.sync(t_obs_, t_pred_);
  model_ = load_model(resume);
  adam_ = resume.adam;
}

double Trainer::step() {
  const std::size_t batch = static_cast<std::size_t>(config_.train.batch_size);
  const std::size_t per = 2 * static_cast<std::size_t>(t_pred_);
  std::vector<std::size_t> idx(batch);
  for (auto& i : idx) {
    i = static_cast<std::size_t>(rng_.uniform_int(0, static_cast<long long>(observed_.size()) - 1));
  }
  std::vector<Trajectory> obs(batch);
  std::vector<Vec2> targets(batch);
  ad::Tensor y0 = ad::Tensor::zeros(batch * static_cast<std::size_t>(t_pred_), 2);
  ad::Tensor ends = ad::Tensor::zeros(batch, 2);
  for (std::size_t b = 0; b < batch; ++b) {
    obs[b] = observed_[idx[b]];
    targets[b] = priors_[idx[b]];
    std::copy_n(futures_.begin() + static_cast<std::ptrdiff_t>(idx[b] * per), per,
                y0.data().begin() + static_cast<std::ptrdiff_t>(b * per));
    ends(b, 0) = endpoints_[idx[b]].x;
    ends(b, 1) = endpoints_[idx[b]].y;
  }

  ad::Graph g;
  ad::Var cond;
  ad::Var aux;
  const bool memory = config_.model.use_memory;
  if (memory) {
    cond = model_->condition(g, obs, targets);
  } else {
    ad::Var end;
    cond = model_->condition_without_memory(g, obs, &end);
    aux = ad::mse(end, g.constant(std::move(ends)));
  }
  ad::Var loss = training_loss(g, y0, cond, model_->eps_model(), model_->schedule(), rng_);
  const double value = loss.value()[0];
  ad::Var total = memory ? loss : ad::add(loss, aux);

  auto& params = model_->params();
  params.zero_grad();
  g.backward(total);
  clip_grad_norm(params, config_.train.grad_clip);
  adam_step(params, adam_, config_.train.adam);
  ++step_;
  return value;
}

std::vector<double> Trainer::run(int n_steps) {
  std::vector<double> losses;
  losses.reserve(static_cast<std::size_t>(std::max(n_steps, 0)));
  for (int i = 0; i < n_steps; ++i) losses.push_back(step());
  return losses;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.kind = "diffusion";
  c.config = config_;
  c.t_obs = t_obs_;
  c.t_pred = t_pred_;
  c.bank_hash = bank_hash_;
  c.step = step_;
  c.params = model_->params();
  c.adam = adam_;
  c.rng_state = rng_.serialize();
  return c;
}

TrainResult train(std::span<const Sample> train_set, const MemoryBank& bank,
                  const RunConfig& config) {
  Trainer t(train_set, bank, config);
  TrainResult r;
  r.losses = t.run(config.train.steps);
  r.checkpoint = t.checkpoint();
  return r;
}

}  // namespace mp2m
