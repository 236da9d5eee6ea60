// Command-line front end: corpus synthesis, training, sampling, evaluation,
// gradient checking and corpus manifests.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>

#include "can/can.hpp"

namespace fs = std::filesystem;

namespace {

int exit_code(can::ErrorKind kind) {
  switch (kind) {
    case can::ErrorKind::usage: return 2;
    case can::ErrorKind::data: return 3;
    case can::ErrorKind::numeric: return 4;
    case can::ErrorKind::io: return 5;
  }
  return 1;
}

void report_error(const char* kind, const std::string& message) {
  std::string flat = message;
  for (char& c : flat) {
    if (c == '\n') c = ' ';
  }
  std::cerr << "error[" << kind << "]: " << flat << "\n";
}

// "synth:<styles>:<per-style>:<seed>" or a corpus directory.
can::StyleDataset load_corpus(const std::string& spec, std::size_t size, bool augment) {
  if (spec.empty()) throw can::UsageError("--data is required");
  if (spec.rfind("synth:", 0) == 0) {
    const std::string rest = spec.substr(6);
    std::vector<std::size_t> parts;
    std::size_t start = 0;
    while (true) {
      const auto colon = rest.find(':', start);
      parts.push_back(can::parse_size_list(rest.substr(start, colon - start), "--data")[0]);
      if (colon == std::string::npos) break;
      start = colon + 1;
    }
    if (parts.size() != 3) throw can::UsageError("synthetic data spec is synth:<styles>:<per-style>:<seed>");
    return can::synth_style_corpus(parts[0], parts[1], size, parts[2]);
  }
  return can::ingest_directory(spec, size, augment);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  f << text;
  f.flush();
  if (!f) throw can::IoError("cannot write " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw can::IoError("cannot create " + dir.string() + ": " + ec.message());
}

// --- train -------------------------------------------------------------------

struct TrainArgs {
  std::string preset = "paper";
  std::string config_file;
  std::map<std::string, std::string> values;  // flag name -> raw value
  std::map<std::string, CLI::Option*> options;
  std::string out;
  std::string resume;
  std::uint64_t max_steps = 0;
  bool quiet = false;
};

can::TrainConfig resolve_config(const TrainArgs& args, std::size_t styles_hint) {
  std::string preset = args.preset;
  can::KeyValues file;
  if (!args.config_file.empty()) {
    for (const auto& [k, v] : can::read_key_value_file(args.config_file)) {
      if (k == "preset") {
        if (args.options.at("preset")->count() == 0) preset = v;
      } else {
        file.emplace_back(k, v);
      }
    }
  }
  can::TrainConfig cfg = can::TrainConfig::preset(preset, styles_hint);
  for (const auto& [k, v] : file) {
    if (!args.options.count(k)) throw can::UsageError("unknown key '" + k + "' in " + args.config_file);
    if (args.options.at(k)->count() > 0) continue;  // flags override the file
    if (!cfg.apply(k, v)) throw can::UsageError("key '" + k + "' is not a training setting");
  }
  for (const auto& [k, v] : args.values) {
    if (args.options.at(k)->count() > 0 && !cfg.apply(k, v)) {
      throw can::UsageError("unknown option --" + k);
    }
  }
  return cfg;
}

template <typename T>
int run_train(can::TrainConfig cfg, const TrainArgs& args) {
  const bool styles_given = args.options.at("styles")->count() > 0;
  can::StyleDataset data = load_corpus(cfg.data, cfg.discriminator.image_size, cfg.augment);
  if (!styles_given) cfg.discriminator.num_styles = data.num_styles();
  if (cfg.holdout > 0.0) data = can::split_dataset(data, cfg.holdout, cfg.seed).first;
  if (!args.quiet) std::cout << can::format_manifest(data.manifest());

  const fs::path out = args.out;
  ensure_dir(out);
  can::TrainState<T> state = args.resume.empty()
                                 ? can::TrainState<T>::create(cfg, data.fingerprint())
                                 : can::load_checkpoint<T>(args.resume, cfg);
  if (!args.resume.empty()) {
    if (state.corpus_fingerprint != data.fingerprint()) {
      throw can::DataError("checkpoint " + args.resume + " was trained on a different corpus");
    }
    // Non-structural settings (epochs, logging) may change on resume.
    state.config = cfg;
  }
  write_text(out / "config.txt", cfg.to_text());
  can::TrainOptions options;
  options.out_dir = out;
  if (args.max_steps > 0) options.max_steps = args.max_steps;
  if (!args.quiet) {
    options.on_log = [](const can::StepLog& log) { std::cout << log.describe() << "\n"; };
  }
  auto result = can::train(std::move(state), data, options);
  if (!result.completed) can::save_checkpoint(result.state, out / "partial.ckpt");
  std::cout << "trained " << result.state.step << " steps; output in " << out.string() << "\n";
  return 0;
}

void add_train(CLI::App& app, TrainArgs& args, std::function<int()>& action) {
  auto* cmd = app.add_subcommand("train", "Train a GAN, SC_CAN or CAN model");
  args.options["preset"] =
      cmd->add_option("--preset", args.preset, "Base configuration: paper, desk or compact")
          ->capture_default_str();
  cmd->add_option("--config", args.config_file, "key=value file; explicit flags override it")
      ->check(CLI::ExistingFile);
  const can::TrainConfig defaults;
  const std::map<std::string, std::string> help{
      {"variant", "gan, sc-can or can"},
      {"lr", "Adam learning rate"},
      {"batch", "Minibatch size"},
      {"epochs", "Passes over the training data"},
      {"seed", "Seed for initialization, noise and batch order"},
      {"beta1", "Adam beta1"},
      {"beta2", "Adam beta2"},
      {"adam-eps", "Adam epsilon"},
      {"log-every", "Log every N steps"},
      {"checkpoint-every", "Checkpoint and sample grid every N steps (0: end only)"},
      {"panel", "Images in the fixed sample panel"},
      {"precision", "Floating point width, 32 or 64"},
      {"data", "Corpus directory, or synth:<styles>:<per-style>:<seed>"},
      {"augment", "Add five 90% crops per image"},
      {"holdout", "Fraction of the corpus held out from training"},
      {"image-size", "Square image size"},
      {"noise-dim", "Noise vector length"},
      {"base-size", "Spatial size of the first generator feature map"},
      {"gen-stages", "Generator stage channels, comma-separated"},
      {"disc-body", "Discriminator convolution channels, comma-separated"},
      {"head-hidden", "Style head hidden widths, comma-separated"},
      {"styles", "Style classes (default: from the corpus)"},
      {"init-std", "Weight initialization standard deviation"},
      {"slope", "LeakyReLU negative slope"},
  };
  for (const auto& [key, value] : defaults.to_key_values()) {
    args.values[key] = value;
    auto* opt = cmd->add_option("--" + key, args.values[key], help.at(key))->default_str(value);
    args.options[key] = opt;
  }
  cmd->add_option("--out", args.out, "Output directory")->required();
  cmd->add_option("--resume", args.resume, "Continue from a checkpoint")->check(CLI::ExistingFile);
  cmd->add_option("--max-steps", args.max_steps, "Stop after this many total steps");
  cmd->add_flag("--quiet", args.quiet, "Only print the final line");
  cmd->callback([&args, &action]() {
    action = [&args]() {
      const can::TrainConfig cfg = resolve_config(args, 25);
      cfg.validate();
      return cfg.precision == can::Precision::f64 ? run_train<double>(cfg, args)
                                                  : run_train<float>(cfg, args);
    };
  });
}

// --- the other subcommands ---------------------------------------------------

template <typename Fn>
int with_checkpoint_precision(const std::string& path, Fn&& fn) {
  const can::TrainConfig cfg = can::peek_checkpoint_config(path);
  if (cfg.precision == can::Precision::f64) return fn(can::load_checkpoint<double>(path));
  return fn(can::load_checkpoint<float>(path));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Creative adversarial network toolkit"};
  app.require_subcommand(1);
  std::function<int()> action;

  // synth-data
  std::size_t styles = 4, per_style = 500, size = 32;
  std::uint64_t seed = 0;
  std::string out;
  auto* synth = app.add_subcommand("synth-data", "Write a synthetic style corpus");
  synth->add_option("--styles", styles, "Number of styles")->capture_default_str();
  synth->add_option("--per-style", per_style, "Images per style")->capture_default_str();
  synth->add_option("--size", size, "Image size")->capture_default_str();
  synth->add_option("--seed", seed, "Random seed")->capture_default_str();
  synth->add_option("--out", out, "Output directory")->required();
  synth->callback([&]() {
    action = [&]() {
      const auto ds = can::synth_style_corpus(styles, per_style, size, seed);
      can::write_corpus(ds, out);
      std::cout << can::format_manifest(ds.manifest());
      return 0;
    };
  });

  // manifest
  std::string data;
  bool augment = false;
  auto* manifest = app.add_subcommand("manifest", "Print the style/count table of a corpus");
  manifest->add_option("--data", data, "Corpus directory")->required();
  manifest->add_option("--size", size, "Decode size")->capture_default_str();
  manifest->add_flag("--augment", augment, "Count augmented samples");
  manifest->callback([&]() {
    action = [&]() {
      std::cout << can::format_manifest(can::ingest_directory(data, size, augment).manifest());
      return 0;
    };
  });

  // train
  TrainArgs train_args;
  add_train(app, train_args, action);

  // sample
  std::string ckpt;
  std::size_t count = 64, columns = 8;
  auto* sample = app.add_subcommand("sample", "Render generator samples to a PNG grid");
  sample->add_option("--ckpt", ckpt, "Training checkpoint")->required()->check(CLI::ExistingFile);
  sample->add_option("--n", count, "Number of images")->capture_default_str();
  sample->add_option("--columns", columns, "Grid columns")->capture_default_str();
  sample->add_option("--seed", seed, "Noise seed")->capture_default_str();
  sample->add_option("--out", out, "PNG path")->required();
  sample->callback([&]() {
    action = [&]() {
      return with_checkpoint_precision(ckpt, [&](auto state) {
        using T = typename decltype(state.eval_noise)::value_type;
        std::mt19937_64 rng(seed);
        const auto z = can::sample_noise<T>(count, state.config.generator.noise_dim, rng);
        can::save_png(out, can::tile_grid(can::generate(state.generator, z, can::kEvalChunk), columns));
        std::cout << "wrote " << out << "\n";
        return 0;
      });
    };
  });

  // train-probe
  can::ProbeTrainConfig probe_cfg;
  double holdout = 0.2;
  auto* probe_cmd = app.add_subcommand("train-probe", "Train the independent style probe on real images");
  probe_cmd->add_option("--data", data, "Corpus directory or synth spec")->required();
  probe_cmd->add_option("--size", size, "Image size")->capture_default_str();
  probe_cmd->add_option("--epochs", probe_cfg.epochs, "Epochs")->capture_default_str();
  probe_cmd->add_option("--batch", probe_cfg.batch_size, "Minibatch size")->capture_default_str();
  probe_cmd->add_option("--lr", probe_cfg.learning_rate, "Adam learning rate")->capture_default_str();
  probe_cmd->add_option("--holdout", holdout, "Held-out fraction for the accuracy report")
      ->capture_default_str();
  probe_cmd->add_option("--seed", probe_cfg.seed, "Random seed")->capture_default_str();
  probe_cmd->add_option("--out", out, "Probe file")->required();
  probe_cmd->callback([&]() {
    action = [&]() {
      const auto ds = load_corpus(data, size, false);
      const auto [train_split, test_split] = can::split_dataset(ds, holdout, probe_cfg.seed);
      auto probe = can::train_probe<double>(train_split, probe_cfg);
      can::save_probe(probe, ds.style_names(), out);
      if (!test_split.empty()) {
        std::cout << "held-out style accuracy " << can::probe_accuracy(probe, test_split) << "\n";
      }
      std::cout << "wrote " << out << "\n";
      return 0;
    };
  });

  // eval
  std::string can_ckpt, sc_ckpt, gan_ckpt, probe_path;
  std::size_t n = 500;
  std::string eval_data;
  double eval_holdout = 0.0;
  auto* eval = app.add_subcommand("eval", "Compare trained variants");
  eval->add_option("--can", can_ckpt, "CAN checkpoint")->check(CLI::ExistingFile);
  eval->add_option("--sc-can", sc_ckpt, "SC_CAN checkpoint")->check(CLI::ExistingFile);
  eval->add_option("--gan", gan_ckpt, "GAN checkpoint")->check(CLI::ExistingFile);
  eval->add_option("--probe", probe_path, "Style probe file")->required()->check(CLI::ExistingFile);
  eval->add_option("--n", n, "Generated samples per variant")->capture_default_str();
  eval->add_option("--seed", seed, "Noise seed")->capture_default_str();
  eval->add_option("--data", eval_data, "Corpus for accuracy measurements (optional)");
  eval->add_option("--holdout", eval_holdout,
                   "Use only the held-out part of --data (same fraction and seed as training)")
      ->capture_default_str();
  eval->add_option("--out", out, "Report directory (default: print only)");
  eval->callback([&]() {
    action = [&]() {
      std::vector<std::pair<std::string, std::string>> named;
      if (!can_ckpt.empty()) named.emplace_back("can", can_ckpt);
      if (!sc_ckpt.empty()) named.emplace_back("sc-can", sc_ckpt);
      if (!gan_ckpt.empty()) named.emplace_back("gan", gan_ckpt);
      if (named.empty()) throw can::UsageError("eval needs at least one of --can, --sc-can, --gan");
      auto precision = can::peek_checkpoint_config(named.front().second).precision;
      for (const auto& [name, path] : named) {
        if (can::peek_checkpoint_config(path).precision != precision) {
          throw can::UsageError("checkpoints mix 32- and 64-bit precision");
        }
      }
      auto run = [&](auto tag) {
        using T = decltype(tag);
        std::vector<can::TrainState<T>> states;
        for (const auto& [name, path] : named) states.push_back(can::load_checkpoint<T>(path));
        std::vector<can::NamedRun<T>> runs;
        for (std::size_t i = 0; i < named.size(); ++i) runs.push_back({named[i].first, &states[i]});
        auto probe = can::load_probe<T>(probe_path);
        can::StyleDataset heldout(states.front().config.discriminator.image_size,
                                  probe.style_names);
        if (!eval_data.empty()) {
          heldout = load_corpus(eval_data, states.front().config.discriminator.image_size, false);
          if (eval_holdout > 0.0) {
            heldout = can::split_dataset(heldout, eval_holdout, states.front().config.seed).second;
          }
        }
        const auto report = can::compare_variants(runs, probe.probe, heldout, n, seed);
        std::cout << report.to_text();
        if (!out.empty()) {
          ensure_dir(out);
          write_text(fs::path(out) / "report.txt", report.to_text());
          write_text(fs::path(out) / "report.csv", report.to_csv());
        }
        return 0;
      };
      return precision == can::Precision::f64 ? run(double{}) : run(float{});
    };
  });

  // grad-check
  std::string gc_preset = "desk";
  std::string gc_variant = "can";
  std::size_t probes = 24;
  std::size_t gc_batch = 4;
  auto* gc = app.add_subcommand("grad-check",
                                "Compare analytic and finite-difference gradients of both objectives");
  gc->add_option("--preset", gc_preset, "Network configuration: desk or compact")->capture_default_str();
  gc->add_option("--variant", gc_variant, "gan, sc-can or can")->capture_default_str();
  gc->add_option("--probes", probes, "Entries probed per parameter tensor (0: all)")
      ->capture_default_str();
  gc->add_option("--batch", gc_batch, "Batch size")->capture_default_str();
  gc->add_option("--seed", seed, "Random seed")->capture_default_str();
  gc->callback([&]() {
    action = [&]() {
      can::TrainConfig cfg = can::TrainConfig::preset(gc_preset, 4);
      cfg.variant = can::parse_variant(gc_variant);
      cfg.seed = seed;
      auto state = can::TrainState<double>::create(cfg);
      const auto ds = can::synth_style_corpus(4, gc_batch, cfg.discriminator.image_size, seed);
      std::vector<std::size_t> idx(gc_batch);
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      std::mt19937_64 rng(seed);
      const auto z = can::sample_noise<double>(gc_batch, cfg.generator.noise_dim, rng);
      can::GradCheckOptions opt;
      opt.max_probes = probes;
      opt.seed = seed;
      bool ok = true;
      for (bool generator_side : {false, true}) {
        const auto report = can::check_objective_gradients(
            state, ds.batch<double>(idx), ds.batch_labels(idx), z, generator_side, opt);
        std::cout << (generator_side ? "generator" : "discriminator") << " objective: max rel error "
                  << report.max_rel_error << " (tolerance " << report.tolerance << ") "
                  << (report.passed ? "ok" : "FAILED") << "\n";
        for (const auto& e : report.entries) {
          std::cout << "  " << e.name << " " << e.max_rel_error << " over " << e.probed;
          if (e.skipped > 0) std::cout << " (" << e.skipped << " at kinks)";
          std::cout << "\n";
        }
        ok = ok && report.passed;
      }
      if (!ok) throw can::NumericError("gradient check exceeded tolerance");
      return 0;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("usage", e.what());
    return 2;
  } catch (const can::Error& e) {
    report_error(can::error_kind_name(e.kind()), e.what());
    return exit_code(e.kind());
  }
  try {
    return action ? action() : 0;
  } catch (const can::Error& e) {
    report_error(can::error_kind_name(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    report_error("io", e.what());
    return 5;
  } catch (const std::bad_alloc&) {
    report_error("io", "out of memory");
    return 5;
  }
}
