#include "mp2m/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "mp2m/config.hpp"
#include "mp2m/data.hpp"
#include "mp2m/errors.hpp"
#include "mp2m/eval.hpp"
#include "mp2m/memory_bank.hpp"
#include "mp2m/serialize.hpp"
#include "mp2m/trainer.hpp"

namespace mp2m::cli {

namespace fs = std::filesystem;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw DataError("write to '" + path + "' failed");
}

std::vector<Sample> filter_split(const std::vector<Sample>& samples, const std::string& split) {
  if (split == "all") return samples;
  const Split want = parse_split(split);
  std::vector<Sample> out;
  for (const auto& s : samples)
    if (s.split == want) out.push_back(s);
  return out;
}

// Config file first, then --set overrides, then dedicated flags.
RunConfig resolve_config(const std::string& config_path, const std::vector<std::string>& sets) {
  RunConfig c;
  if (!config_path.empty()) {
    for (const auto& [k, v] : parse_key_values(read_file(config_path))) c.set(k, v);
  }
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ArgumentError("--set expects key=value, got '" + kv + "'");
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t") + 1);
      return s;
    };
    c.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
  return c;
}

void log_config(std::ostream& err, const RunConfig& c) {
  for (const auto& [k, v] : c.entries()) err << "[mp2m] config " << k << " = " << v << "\n";
}

void log_options(std::ostream& err, const CLI::App& sub) {
  std::istringstream lines(sub.config_to_str(true, false));
  std::string line;
  while (std::getline(lines, line)) {
    if (!line.empty() && line[0] != '[') err << "[mp2m] " << sub.get_name() << " " << line << "\n";
  }
}

Checkpoint train_loop(const std::vector<Sample>& train_set, const MemoryBank& bank,
                      const RunConfig& config, const Checkpoint* resume, std::ostream& err,
                      std::ostream* log = nullptr) {
  auto trainer = resume ? std::make_unique<Trainer>(train_set, bank, *resume)
                        : std::make_unique<Trainer>(train_set, bank, config);
  const long long total = config.train.steps;
  double running = 0.0;
  int count = 0;
  while (trainer->steps_done() < total) {
    const double loss = trainer->step();
    if (log) *log << trainer->steps_done() << " " << format_g(loss) << "\n";
    running += loss;
    ++count;
    if (trainer->steps_done() % 100 == 0 || trainer->steps_done() == total) {
      err << "[mp2m] step " << trainer->steps_done() << "/" << total
          << " loss " << running / count << "\n";
      running = 0.0;
      count = 0;
    }
  }
  return trainer->checkpoint();
}

struct WindowFlags {
  std::string columns = "0,1,2,3";
  double unit_scale = 1.0;
  long long frame_step = 0;
  int t_obs = 8;
  int t_pred = 12;
  int stride = 1;

  void add(CLI::App* sub) {
    sub->add_option("--columns", columns, "frame,agent,x,y column indices")->capture_default_str();
    sub->add_option("--unit-scale", unit_scale, "factor applied to x and y")->capture_default_str();
    sub->add_option("--frame-step", frame_step, "frame id increment; 0 infers it")
        ->capture_default_str();
    sub->add_option("--t-obs", t_obs)->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--t-pred", t_pred)->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--stride", stride)->capture_default_str()->check(CLI::PositiveNumber);
  }

  std::vector<Sample> windows(const std::string& path, const std::string& scene,
                              Split split) const {
    ColumnMap cols = ColumnMap::parse(columns);
    cols.unit_scale = unit_scale;
    const auto tracks = parse_track_file(read_file(path), cols);
    WindowConfig w;
    w.t_obs = t_obs;
    w.t_pred = t_pred;
    w.stride = stride;
    w.frame_step = frame_step;
    return extract_windows(tracks, w, scene, split);
  }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Memory-guided diffusion trajectory forecasting"};
  app.name("mp2m");
  app.require_subcommand(1);

  // synth
  SynthConfig synth;
  std::string synth_out, synth_split = "train", synth_raw;
  auto* c_synth = app.add_subcommand("synth", "Generate a labeled synthetic dataset");
  c_synth->add_option("--out", synth_out, "dataset file")->required();
  c_synth->add_option("--raw", synth_raw, "also write raw `frame agent x y` tracks");
  c_synth->add_option("--patterns", synth.n_patterns)->capture_default_str()->check(CLI::PositiveNumber);
  c_synth->add_option("--per-pattern", synth.n_per_pattern)->capture_default_str()->check(CLI::PositiveNumber);
  c_synth->add_option("--noise", synth.noise_std)->capture_default_str()->check(CLI::NonNegativeNumber);
  c_synth->add_option("--speed", synth.speed)->capture_default_str();
  c_synth->add_option("--t-obs", synth.t_obs)->capture_default_str()->check(CLI::PositiveNumber);
  c_synth->add_option("--t-pred", synth.t_pred)->capture_default_str()->check(CLI::PositiveNumber);
  c_synth->add_option("--split", synth_split, "train, test or none")->capture_default_str();
  c_synth->add_option("--seed", synth.seed)->required();

  // ingest
  WindowFlags ingest_w;
  std::string ingest_in, ingest_out, ingest_scene, ingest_split = "none";
  auto* c_ingest = app.add_subcommand("ingest", "Convert raw tracks into windowed samples");
  c_ingest->add_option("--input", ingest_in, "raw track file")->required();
  c_ingest->add_option("--out", ingest_out, "dataset file")->required();
  c_ingest->add_option("--scene", ingest_scene, "scene id (defaults to the file stem)");
  c_ingest->add_option("--split", ingest_split, "train, test or none")->capture_default_str();
  ingest_w.add(c_ingest);

  // build-memory
  std::string bm_data, bm_out;
  std::size_t bm_k = 32;
  std::uint64_t bm_seed = 0;
  double bm_eps = 1e-6;
  auto* c_bank = app.add_subcommand("build-memory", "Cluster training windows into a memory bank");
  c_bank->add_option("--data", bm_data, "dataset file; only train samples are used")->required();
  c_bank->add_option("--out", bm_out, "bank file")->required();
  c_bank->add_option("--k", bm_k)->capture_default_str()->check(CLI::PositiveNumber);
  c_bank->add_option("--seed", bm_seed)->required();
  c_bank->add_option("--eps", bm_eps, "variance floor")->capture_default_str();

  // train
  std::string tr_config, tr_bank, tr_data, tr_out, tr_model = "diffusion", tr_resume, tr_log;
  std::vector<std::string> tr_sets;
  std::uint64_t tr_seed = 0;
  int tr_steps = 0;
  auto* c_train = app.add_subcommand("train", "Train the denoiser");
  c_train->add_option("--config", tr_config, "key = value file");
  c_train->add_option("--set", tr_sets, "key=value override (repeatable)");
  c_train->add_option("--bank", tr_bank)->required();
  c_train->add_option("--data", tr_data, "dataset file; only train samples are used");
  c_train->add_option("--out", tr_out, "checkpoint file")->required();
  c_train->add_option("--seed", tr_seed);
  c_train->add_option("--steps", tr_steps)->check(CLI::PositiveNumber);
  c_train->add_option("--resume", tr_resume, "continue from a checkpoint");
  c_train->add_option("--log", tr_log, "write `step loss` lines to this file");
  c_train->add_option("--model", tr_model, "diffusion or oracle")
      ->capture_default_str()
      ->check(CLI::IsMember({"diffusion", "oracle"}));

  // predict
  PredictOptions pr;
  std::string pr_ckpt, pr_bank, pr_in, pr_out, pr_split = "all";
  auto* c_pred = app.add_subcommand("predict", "Sample K futures per window");
  c_pred->add_option("--checkpoint", pr_ckpt)->required();
  c_pred->add_option("--bank", pr_bank)->required();
  c_pred->add_option("--input", pr_in, "dataset file")->required();
  c_pred->add_option("--out", pr_out, "prediction file")->required();
  c_pred->add_option("--split", pr_split, "train, test, none or all")->capture_default_str();
  c_pred->add_option("--k", pr.k)->capture_default_str()->check(CLI::PositiveNumber);
  c_pred->add_option("--seed", pr.seed)->required();
  c_pred->add_option("--workers", pr.workers)->capture_default_str()->check(CLI::PositiveNumber);

  // eval
  PredictOptions ev;
  std::string ev_ckpt, ev_bank, ev_data, ev_out, ev_split = "test";
  auto* c_eval = app.add_subcommand("eval", "Best-of-K ADE/FDE on one split");
  c_eval->add_option("--checkpoint", ev_ckpt)->required();
  c_eval->add_option("--bank", ev_bank)->required();
  c_eval->add_option("--data", ev_data, "dataset file")->required();
  c_eval->add_option("--split", ev_split, "train, test, none or all")->capture_default_str();
  c_eval->add_option("--out", ev_out, "report file (stdout when omitted)");
  c_eval->add_option("--k", ev.k)->capture_default_str()->check(CLI::PositiveNumber);
  c_eval->add_option("--seed", ev.seed)->required();
  c_eval->add_option("--workers", ev.workers)->capture_default_str()->check(CLI::PositiveNumber);

  // plot
  std::string pl_pred, pl_out;
  std::size_t pl_index = 0;
  auto* c_plot = app.add_subcommand("plot", "Render one predicted window as SVG");
  c_plot->add_option("--pred", pl_pred, "prediction file")->required();
  c_plot->add_option("--out", pl_out, "SVG file")->required();
  c_plot->add_option("--index", pl_index, "sample index")->capture_default_str();

  // loo
  WindowFlags loo_w;
  std::string loo_dir, loo_out, loo_config;
  std::vector<std::string> loo_sets;
  PredictOptions loo_pred;
  std::uint64_t loo_seed = 0;
  int loo_steps = 0;
  auto* c_loo = app.add_subcommand("loo", "Leave-one-out over the scene files in a directory");
  c_loo->add_option("--data-dir", loo_dir, "one raw track file per scene")->required()->check(CLI::ExistingDirectory);
  c_loo->add_option("--out", loo_out, "report directory")->required();
  c_loo->add_option("--config", loo_config, "key = value file");
  c_loo->add_option("--set", loo_sets, "key=value override (repeatable)");
  c_loo->add_option("--seed", loo_seed)->required();
  c_loo->add_option("--steps", loo_steps)->check(CLI::PositiveNumber);
  c_loo->add_option("--k", loo_pred.k)->capture_default_str()->check(CLI::PositiveNumber);
  c_loo->add_option("--workers", loo_pred.workers)->capture_default_str()->check(CLI::PositiveNumber);
  loo_w.add(c_loo);

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "mp2m: " << e.what() << "\n";
    const CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands()[0];
    err << sub->help();
    return 1;
  }

  try {
    CLI::App* sub = app.get_subcommands()[0];
    log_options(err, *sub);

    if (sub == c_synth) {
      synth.split = parse_split(synth_split);
      const auto samples = synth_generate(synth);
      save_dataset(synth_out, samples);
      if (!synth_raw.empty()) write_file(synth_raw, format_track_file(to_tracks(samples)));
      err << "[mp2m] wrote " << samples.size() << " samples\n";
    } else if (sub == c_ingest) {
      const std::string scene =
          ingest_scene.empty() ? fs::path(ingest_in).stem().string() : ingest_scene;
      const auto samples = ingest_w.windows(ingest_in, scene, parse_split(ingest_split));
      if (samples.empty()) throw DataError("no complete windows in '" + ingest_in + "'");
      save_dataset(ingest_out, samples);
      err << "[mp2m] wrote " << samples.size() << " samples\n";
    } else if (sub == c_bank) {
      const auto train_set = filter_split(load_dataset(bm_data), "train");
      if (train_set.empty()) throw DataError("'" + bm_data + "' holds no train samples");
      const auto bank = build_bank(train_set, bm_k, bm_seed, bm_eps);
      save_bank(bank, bm_out);
      err << "[mp2m] bank holds " << bank.size() << " patterns\n";
    } else if (sub == c_train) {
      const MemoryBank bank = load_bank(tr_bank);
      if (tr_model == "oracle") {
        save_checkpoint(make_oracle_checkpoint(bank), tr_out);
        return 0;
      }
      if (tr_data.empty()) throw CLI::RequiredError("--data");
      std::unique_ptr<Checkpoint> resume;
      RunConfig config;
      if (!tr_resume.empty()) {
        resume = std::make_unique<Checkpoint>(load_checkpoint(tr_resume));
        config = resume->config;
        if (tr_steps > 0) config.train.steps = tr_steps;
        resume->config.train.steps = config.train.steps;
      } else {
        config = resolve_config(tr_config, tr_sets);
        if (c_train->count("--seed")) config.train.seed = tr_seed;
        if (tr_steps > 0) config.train.steps = tr_steps;
      }
      log_config(err, config);
      const auto train_set = filter_split(load_dataset(tr_data), "train");
      if (train_set.empty()) throw DataError("'" + tr_data + "' holds no train samples");
      std::ofstream log_file;
      if (!tr_log.empty()) {
        log_file.open(tr_log, std::ios::binary);
        if (!log_file) throw DataError("cannot open '" + tr_log + "' for writing");
      }
      save_checkpoint(train_loop(train_set, bank, config, resume.get(), err,
                                 tr_log.empty() ? nullptr : &log_file),
                      tr_out);
    } else if (sub == c_pred) {
      const auto samples = filter_split(load_dataset(pr_in), pr_split);
      PredictionSet set;
      set.candidates = predict(load_checkpoint(pr_ckpt), load_bank(pr_bank), samples, pr);
      set.samples = samples;
      save_predictions(set, pr_out);
    } else if (sub == c_eval) {
      const auto samples = filter_split(load_dataset(ev_data), ev_split);
      const EvalReport r =
          evaluate(load_checkpoint(ev_ckpt), load_bank(ev_bank), samples, ev_split, ev);
      const std::string json = report_json(r);
      if (ev_out.empty()) {
        out << json;
      } else {
        write_file(ev_out, json);
      }
      err << "[mp2m] " << ev_split << " ADE " << r.ade << " FDE " << r.fde << " over " << r.n
          << " windows\n";
    } else if (sub == c_plot) {
      const PredictionSet set = load_predictions(pl_pred);
      if (pl_index >= set.samples.size()) {
        throw ArgumentError("--index " + std::to_string(pl_index) + " out of range (" +
                            std::to_string(set.samples.size()) + " samples)");
      }
      emit_plot(set.samples[pl_index], set.candidates[pl_index], pl_out);
    } else if (sub == c_loo) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(loo_dir))
        if (e.is_regular_file()) files.push_back(e.path());
      std::sort(files.begin(), files.end());
      if (files.size() < 2) throw DataError("leave-one-out needs at least two scene files");
      RunConfig config = resolve_config(loo_config, loo_sets);
      config.train.seed = loo_seed;
      if (loo_steps > 0) config.train.steps = loo_steps;
      log_config(err, config);
      std::vector<std::vector<Sample>> scenes;
      for (const auto& f : files) {
        scenes.push_back(loo_w.windows(f.string(), f.stem().string(), Split::kTrain));
        if (scenes.back().empty()) throw DataError("no complete windows in '" + f.string() + "'");
      }
      fs::create_directories(loo_out);
      std::vector<EvalReport> reports;
      for (std::size_t held = 0; held < scenes.size(); ++held) {
        std::vector<Sample> train_set, test_set;
        for (std::size_t s = 0; s < scenes.size(); ++s) {
          for (Sample smp : scenes[s]) {
            if (s == held) {
              smp.split = Split::kTest;
              test_set.push_back(std::move(smp));
            } else {
              train_set.push_back(std::move(smp));
            }
          }
        }
        const std::string name = files[held].stem().string();
        err << "[mp2m] held out " << name << ": " << train_set.size() << " train, "
            << test_set.size() << " test windows\n";
        const std::size_t k = std::min(config.bank_k, train_set.size());
        const MemoryBank bank = build_bank(train_set, k, loo_seed);
        const Checkpoint ckpt = train_loop(train_set, bank, config, nullptr, err);
        loo_pred.seed = loo_seed;
        EvalReport r = evaluate(ckpt, bank, test_set, name, loo_pred);
        write_file((fs::path(loo_out) / (name + ".json")).string(), report_json(r));
        err << "[mp2m] " << name << " ADE " << r.ade << " FDE " << r.fde << "\n";
        reports.push_back(std::move(r));
      }
      const std::string summary = report_json(reports);
      write_file((fs::path(loo_out) / "summary.json").string(), summary);
      out << summary;
    }
    return 0;
  } catch (const CLI::RequiredError& e) {
    err << "mp2m: " << e.what() << " is required\n";
    return 1;
  } catch (const ArgumentError& e) {
    err << "mp2m: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    err << "mp2m: " << e.what() << "\n";
    return 2;
  } catch (const StateError& e) {
    err << "mp2m: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    err << "mp2m: " << e.what() << "\n";
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "mp2m: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace mp2m::cli
