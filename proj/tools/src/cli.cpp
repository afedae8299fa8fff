#include "dtg/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "dtg/augment.hpp"
#include "dtg/checkpoint.hpp"
#include "dtg/config.hpp"
#include "dtg/dataset.hpp"
#include "dtg/plot.hpp"
#include "dtg/train.hpp"

namespace fs = std::filesystem;

namespace dtg::cli {
namespace {

class UserError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string kebab(std::string key) {
  for (char& c : key) {
    if (c == '_') c = '-';
  }
  return key;
}

std::set<std::string> join(std::initializer_list<std::set<std::string>> parts) {
  std::set<std::string> out;
  for (const auto& p : parts) out.insert(p.begin(), p.end());
  return out;
}

// A subcommand whose flags are generated from its config keys. Values from
// --config load first; flags override them.
struct Command {
  CLI::App* app = nullptr;
  std::set<std::string> keys;
  std::string config_path;
  std::map<std::string, std::string> flags;

  Command(CLI::App& root, const std::string& name, const std::string& help,
          std::set<std::string> known, const std::map<std::string, std::string>& docs = {})
      : keys(std::move(known)) {
    app = root.add_subcommand(name, help);
    app->add_option("--config", config_path, "Key-value config file");
    for (const auto& k : keys) {
      auto it = docs.find(k);
      app->add_option_function<std::string>(
          "--" + kebab(k), [this, k](const std::string& v) { flags[k] = v; },
          it == docs.end() ? "Overrides config key " + k : it->second);
    }
  }

  KeyValueConfig resolve() const {
    KeyValueConfig kv;
    if (!config_path.empty()) kv = KeyValueConfig::load(config_path);
    for (const auto& [k, v] : flags) kv.set(k, v);
    kv.require_known(keys);
    return kv;
  }
};

KeyValueConfig without(const KeyValueConfig& kv, const std::set<std::string>& drop) {
  KeyValueConfig out;
  for (const auto& [k, v] : kv.values()) {
    if (!drop.contains(k)) out.set(k, v);
  }
  return out;
}

KeyValueConfig only(const KeyValueConfig& kv, const std::set<std::string>& keep) {
  KeyValueConfig out;
  for (const auto& [k, v] : kv.values()) {
    if (keep.contains(k)) out.set(k, v);
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw UserError("cannot write " + path.string());
  os << text;
}

std::vector<double> parse_doubles(const std::vector<std::string>& items) {
  std::vector<double> out;
  for (const auto& s : items) {
    KeyValueConfig kv;
    kv.set("value", s);
    out.push_back(kv.get_double("value", 0.0));
  }
  return out;
}

std::vector<int> parse_ints(const std::vector<std::string>& items) {
  std::vector<int> out;
  for (const auto& s : items) {
    KeyValueConfig kv;
    kv.set("value", s);
    out.push_back(kv.get_int("value", 0));
  }
  return out;
}

std::vector<Split> parse_splits(const std::vector<std::string>& names) {
  std::vector<Split> out;
  for (const auto& n : names) {
    try {
      out.push_back(parse_split(n));
    } catch (const std::exception&) {
      throw UserError("unknown split '" + n + "' (expected train, val, test_iid or test_ood)");
    }
  }
  return out;
}

std::string echo_header(const std::string& command) {
  return "# resolved configuration for `" + command + "`\n";
}

// ---------------------------------------------------------------------------

int cmd_synth(const Command& c, std::ostream& out) {
  const KeyValueConfig kv = c.resolve();
  const fs::path dir = kv.get_string("out", "data");
  const double clip_seconds = kv.get_double("clip_seconds", 1.0);
  const SyntheticConfig cfg = synthetic_config_from(without(kv, {"out", "clip_seconds"}));
  const Dataset ds = generate_synthetic_dataset(cfg);
  write_dataset(dir, ds.samples, clip_seconds);

  KeyValueConfig echo = to_key_values(cfg);
  echo.set("clip_seconds", kv.get_string("clip_seconds", "1"));
  echo.set("out", dir.string());
  write_text(dir / "synth.cfg", echo_header("synth-data") + echo.to_text());

  out << "wrote " << ds.samples.size() << " samples to " << dir.string() << '\n';
  for (Split s : kAllSplits) {
    out << "  " << to_string(s) << ": " << ds.split(s).size() << '\n';
  }
  return 0;
}

int cmd_train(const Command& c, std::ostream& out) {
  const KeyValueConfig kv = c.resolve();
  const fs::path data_dir = kv.get_string("data", "data");
  const fs::path run_dir = kv.get_string("out", "run");
  const double clip_seconds = kv.get_double("clip_seconds", 1.0);

  const ModelConfig base = model_config_from(only(kv, model_config_keys()));
  const TrainConfig tcfg = train_config_from(only(kv, train_config_keys()));
  tcfg.validate();
  const Dataset ds = load_dataset(data_dir, clip_seconds);
  for (const auto& w : ds.warnings) out << "warning: " << w << '\n';
  const ModelConfig mcfg = model_config_for(ds, base);

  fs::create_directories(run_dir);
  KeyValueConfig echo = to_key_values(mcfg);
  echo.merge(to_key_values(tcfg));
  echo.set("data", fs::absolute(data_dir).lexically_normal().string());
  echo.set("out", run_dir.string());
  echo.set("clip_seconds", kv.get_string("clip_seconds", "1"));
  write_text(run_dir / "config.cfg", echo_header("train") + echo.to_text());

  DebiasedModel model(mcfg, tcfg.seed);
  std::ofstream log(run_dir / "report.jsonl", std::ios::trunc);
  TrainHooks hooks;
  hooks.checkpoint_dir = run_dir;
  hooks.on_epoch = [&](const EpochRecord& r) {
    log << r.to_json() << '\n';
    log.flush();
    std::ostringstream line;
    line.setf(std::ios::fixed);
    line.precision(4);
    line << "epoch " << r.epoch << "  L=" << r.total << "  L_g=" << r.components.l_g
         << "  L_cm=" << r.components.l_cm << "  L_d=" << r.components.l_d
         << "  L_kl=" << r.components.l_kl << "  val R@1,IoU=0.5=" << r.val_r1_iou05;
    out << line.str() << '\n';
  };
  const TrainReport report = train(model, ds, tcfg, hooks);
  out << "best epoch " << report.best_epoch << " (val R@1,IoU=0.5=" << report.best_val
      << "), checkpoint " << report.checkpoint.string() << '\n';
  return 0;
}

int cmd_evaluate(const Command& c, std::ostream& out) {
  const KeyValueConfig kv = c.resolve();
  const fs::path run_dir = kv.get_string("run", "run");
  std::string ckpt = kv.get_string("ckpt", "best");
  fs::path ckpt_path = ckpt == "best" || ckpt == "last" ? run_dir / (ckpt + ".ckpt")
                                                        : fs::path(ckpt);
  KeyValueConfig run_cfg;
  if (fs::exists(run_dir / "config.cfg")) run_cfg = KeyValueConfig::load(run_dir / "config.cfg");
  const fs::path data_dir = kv.get_string("data", run_cfg.get_string("data", "data"));
  const double clip_seconds =
      kv.get_double("clip_seconds", run_cfg.get_double("clip_seconds", 1.0));
  const fs::path out_dir = kv.get_string("out", run_dir.string());

  const std::vector<Split> splits =
      parse_splits(kv.get_list("split", {"test_iid", "test_ood"}));
  EvalOptions opt;
  opt.thresholds = parse_doubles(kv.get_list("thresholds", {"0.3", "0.5", "0.7"}));
  opt.n_values = parse_ints(kv.get_list("n", {"1"}));
  for (int n : opt.n_values) {
    if (n < 1) throw UserError("n values must be >= 1");
  }

  const LoadedCheckpoint ck = load_checkpoint(ckpt_path);
  const Dataset ds = load_dataset(data_dir, clip_seconds, &ck.vocab);
  if (ds.feature_dim() != ck.model->config().d_in) {
    throw UserError("feature dimension " + std::to_string(ds.feature_dim()) +
                    " does not match the checkpoint (" +
                    std::to_string(ck.model->config().d_in) + ")");
  }
  opt.prior = &ck.prior;

  MetricTable table;
  std::string tag;
  for (Split s : splits) {
    std::vector<const Sample*> samples = ds.split(s);
    for (const Sample* x : samples) {
      if (x->video.length() > ck.model->config().t_max) {
        throw UserError("sample " + x->id + " is longer than the checkpoint's t_max");
      }
    }
    opt.split = std::string(to_string(s));
    const MetricTable t = evaluate(ck.model->backbone(), samples, opt);
    table.rows.insert(table.rows.end(), t.rows.begin(), t.rows.end());
    tag += (tag.empty() ? "" : "+") + opt.split;
  }
  out << table.to_text();

  KeyValueConfig echo = kv;
  echo.set("ckpt", ckpt_path.string());
  echo.set("data", data_dir.string());
  write_text(out_dir / ("eval_" + tag + ".txt"), table.to_text());
  write_text(out_dir / ("eval_" + tag + ".jsonl"), table.to_jsonl());
  write_text(out_dir / ("eval_" + tag + ".cfg"), echo_header("evaluate") + echo.to_text());
  return 0;
}

AugmentConfig augment_config_from(const KeyValueConfig& kv) {
  AugmentConfig a;
  a.beta_sv = kv.get_int("beta_sv", a.beta_sv);
  a.beta_lv = kv.get_int("beta_lv", a.beta_lv);
  a.enable_sv = kv.get_bool("enable_sv", a.enable_sv);
  a.enable_lv = kv.get_bool("enable_lv", a.enable_lv);
  a.t_max = kv.get_int("t_max", ModelConfig{}.t_max);
  if (kv.has("keywords")) {
    const auto words = kv.get_list("keywords", {});
    a.keywords = std::set<std::string>(words.begin(), words.end());
  }
  a.validate();
  return a;
}

int cmd_augment_stats(const Command& c, std::ostream& out) {
  const KeyValueConfig kv = c.resolve();
  const fs::path data_dir = kv.get_string("data", "data");
  const Split split = parse_splits({kv.get_string("split", "train")}).front();
  const int bins = kv.get_int("bins", 10);
  if (bins < 1) throw UserError("bins must be >= 1");
  const AugmentConfig acfg = augment_config_from(kv);
  const Dataset ds = load_dataset(data_dir, kv.get_double("clip_seconds", 1.0));
  const std::vector<const Sample*> samples = ds.split(split);
  if (samples.empty()) throw UserError("split " + std::string(to_string(split)) + " is empty");

  const DiversificationStats st =
      diversification_stats(samples, acfg, kv.get_u64("seed", 1), bins);
  out << "normalized start time, " << to_string(split) << " originals (n="
      << st.before.total() << ")\n"
      << render_histogram_text(st.before) << "entropy " << st.entropy_before << " nats\n\n"
      << "originals and variants (n=" << st.after.total() << ", sv=" << st.shortened
      << ", lv=" << st.lengthened << ", lv skipped=" << st.lengthening_skipped << ")\n"
      << render_histogram_text(st.after) << "entropy " << st.entropy_after << " nats\n";

  if (kv.has("out")) {
    const fs::path path = kv.get_string("out", "");
    write_text(path, render_histogram_svg({{"original", st.before}, {"augmented", st.after}},
                                          "start-time distribution"));
    write_text(path.string() + ".cfg", echo_header("augment-stats") + kv.to_text());
    out << "wrote " << path.string() << '\n';
  }
  return 0;
}

int cmd_plot_bias(const Command& c, std::ostream& out) {
  const KeyValueConfig kv = c.resolve();
  const fs::path data_dir = kv.get_string("data", "data");
  const fs::path path = kv.get_string("out", "bias.svg");
  const int bins = kv.get_int("bins", 10);
  if (bins < 1) throw UserError("bins must be >= 1");
  const std::vector<Split> splits =
      parse_splits(kv.get_list("split", {"train", "test_iid", "test_ood"}));
  const std::vector<std::string> terms = kv.get_list("term", {});
  const Dataset ds = load_dataset(data_dir, kv.get_double("clip_seconds", 1.0));

  std::vector<HistogramSeries> series;
  for (Split s : splits) {
    std::vector<const Sample*> chosen;
    for (const Sample* x : ds.split(s)) {
      bool keep = terms.empty();
      for (const auto& w : tokenize(x->query.raw_text)) {
        for (const auto& t : terms) keep = keep || w == t;
      }
      if (keep) chosen.push_back(x);
    }
    std::string label(to_string(s));
    if (!terms.empty()) {
      label += " [";
      for (std::size_t i = 0; i < terms.size(); ++i) label += (i ? "," : "") + terms[i];
      label += "]";
    }
    series.push_back({label, compute_temporal_distribution(chosen, bins)});
    out << label << ": " << chosen.size() << " samples\n";
  }
  write_text(path, render_histogram_svg(series, "moment start-time distribution"));
  write_text(path.string() + ".cfg", echo_header("plot-bias") + kv.to_text());
  out << "wrote " << path.string() << '\n';
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Debiased temporal sentence grounding toolkit"};
  app.require_subcommand(1);

  const std::set<std::string> synth_keys =
      join({synthetic_config_keys(), {"out", "clip_seconds"}});
  const std::set<std::string> train_keys =
      join({model_config_keys(), train_config_keys(), {"data", "out", "clip_seconds"}});
  const std::set<std::string> eval_keys{"run", "ckpt", "data", "split", "thresholds",
                                        "n", "out", "clip_seconds"};
  const std::set<std::string> aug_keys{"data", "split", "beta_sv", "beta_lv", "enable_sv",
                                       "enable_lv", "keywords", "t_max", "bins", "seed",
                                       "out", "clip_seconds"};
  const std::set<std::string> plot_keys{"data", "split", "term", "bins", "out",
                                        "clip_seconds"};

  Command synth(app, "synth-data", "Generate the biased synthetic benchmark", synth_keys,
                {{"out", "Output dataset directory (default data)"}});
  Command trainc(app, "train", "Train a grounding model", train_keys,
                 {{"data", "Dataset directory (default data)"},
                  {"out", "Run directory for checkpoints and reports (default run)"},
                  {"mode", "baseline, aug_only, aug_ld, aug_lkl or full"}});
  Command evalc(app, "evaluate", "Evaluate a checkpoint", eval_keys,
                {{"run", "Run directory (default run)"},
                 {"ckpt", "Checkpoint path, or best/last inside the run directory"},
                 {"split", "Comma-separated splits (default test_iid,test_ood)"},
                 {"thresholds", "Comma-separated IoU thresholds (default 0.3,0.5,0.7)"},
                 {"n", "Comma-separated n values for R@n (default 1)"}});
  Command augc(app, "augment-stats", "Start-time histograms before and after augmentation",
               aug_keys, {{"out", "Optional SVG output path"}});
  Command plotc(app, "plot-bias", "Render start-time histograms per split and query term",
                plot_keys,
                {{"term", "Comma-separated query words; samples containing any are kept"},
                 {"out", "SVG output path (default bias.svg)"}});

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth.app->parsed()) return cmd_synth(synth, out);
    if (trainc.app->parsed()) return cmd_train(trainc, out);
    if (evalc.app->parsed()) return cmd_evaluate(evalc, out);
    if (augc.app->parsed()) return cmd_augment_stats(augc, out);
    if (plotc.app->parsed()) return cmd_plot_bias(plotc, out);
  } catch (const TrainingDiverged& e) {
    err << "error: training diverged: " << e.what() << '\n';
    return 2;
  } catch (const UserError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const IngestionError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const AugmentError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const SequenceLengthError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return 2;
  }
  err << "error: no command given\n";
  return 1;
}

}  // namespace dtg::cli
