// SPDX-License-Identifier: Apache-2.0
// Command-line front end. Talks to the library only through scale/scale.h.

#include <CLI11.hpp>
#include <json.hpp>
#include <scale/scale.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "oracle.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitNumeric = 2;
constexpr int kExitIo = 3;

struct CliFailure {
  int code;
  std::string message;
};

[[noreturn]] void fail(int code, std::string message) { throw CliFailure{code, std::move(message)}; }

void check(scale_status s) {
  switch (s) {
    case SCALE_OK:
      return;
    case SCALE_ERR_VALIDATION:
      fail(kExitValidation, scale_last_error());
    case SCALE_ERR_NUMERIC:
      fail(kExitNumeric, scale_last_error());
    case SCALE_ERR_IO:
      fail(kExitIo, scale_last_error());
    default:
      fail(kExitValidation, std::string("internal error: ") + scale_last_error());
  }
}

template <class T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
using BankPtr = std::unique_ptr<scale_bank, Deleter<scale_bank, scale_bank_free>>;
using ModelPtr = std::unique_ptr<scale_model, Deleter<scale_model, scale_model_free>>;
using TablePtr = std::unique_ptr<scale_energy_table, Deleter<scale_energy_table, scale_energy_table_free>>;
using MicroPtr = std::unique_ptr<scale_micro, Deleter<scale_micro, scale_micro_free>>;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(kExitIo, "cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !(out << text)) fail(kExitIo, "cannot write '" + path.string() + "'");
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(kExitIo, "cannot create directory '" + dir.string() + "': " + ec.message());
}

/// Flag values layered over the config file. Only flags that were given
/// end up in the overlay.
class Overlay {
 public:
  template <class T>
  void add(CLI::App* app, const std::string& flag, const std::string& section, const std::string& key,
           const std::string& help) {
    auto slot = std::make_shared<std::optional<T>>();
    app->add_option_function<T>(flag, [slot](const T& v) { *slot = v; }, help);
    entries_.push_back([slot, section, key](json& doc) {
      if (*slot) doc[section][key] = **slot;
    });
  }

  void apply(json& doc) const {
    for (const auto& e : entries_) e(doc);
  }

 private:
  std::vector<std::function<void(json&)>> entries_;
};

struct Common {
  std::string config_path;
  Overlay overlay;
};

json load_config(const Common& c) {
  json doc = json::object();
  if (!c.config_path.empty()) {
    try {
      doc = json::parse(read_file(c.config_path));
    } catch (const json::exception& e) {
      fail(kExitValidation, "config '" + c.config_path + "': " + e.what());
    }
    if (!doc.is_object()) fail(kExitValidation, "config '" + c.config_path + "' must be a JSON object");
  }
  c.overlay.apply(doc);
  return doc;
}

/// Validates and fills defaults through the library.
json resolve(const json& doc) {
  char* out = nullptr;
  check(scale_config_resolve(doc.dump().c_str(), &out));
  json resolved = json::parse(out);
  scale_string_free(out);
  return resolved;
}

/// The echo omits paths.out: the file already lives there, and omitting it
/// keeps two runs that differ only in location byte-identical.
void echo_config(const json& resolved, const fs::path& dir) {
  json echo = resolved;
  echo["paths"].erase("out");
  write_file(dir / "config.json", echo.dump(2) + "\n");
}

std::size_t eval_threads() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("SCALE_THREADS")) {
    char* end = nullptr;
    const long long cap = std::strtoll(env, &end, 10);
    if (end == env || *end != '\0' || cap < 1) fail(kExitValidation, "SCALE_THREADS must be a positive integer");
    n = std::min<std::size_t>(n, static_cast<std::size_t>(cap));
  }
  return n;
}

void add_synth_flags(CLI::App* app, Overlay& o) {
  o.add<std::size_t>(app, "--num-seen", "synth", "num_seen", "number of seen classes");
  o.add<std::size_t>(app, "--num-unseen", "synth", "num_unseen", "number of unseen classes");
  o.add<std::size_t>(app, "--d-s", "synth", "d_s", "skeleton feature width");
  o.add<std::size_t>(app, "--d-t", "synth", "d_t", "text embedding width");
  o.add<std::size_t>(app, "--samples-per-class", "synth", "samples_per_class", "samples drawn per class");
  o.add<double>(app, "--noise", "synth", "noise_scale", "feature noise scale");
  o.add<std::size_t>(app, "--rank", "synth", "mixing_rank", "rank of the text-to-feature map");
  o.add<std::uint64_t>(app, "--seed", "synth", "seed", "bank seed");
}

void add_train_flags(CLI::App* app, Overlay& o) {
  o.add<double>(app, "--lr", "train", "lr", "base learning rate");
  o.add<double>(app, "--weight-decay", "train", "weight_decay", "decoupled weight decay");
  o.add<std::size_t>(app, "--batch-size", "train", "batch_size", "minibatch size");
  o.add<std::size_t>(app, "--epochs", "train", "epochs", "training epochs");
  o.add<std::size_t>(app, "--beta-cycles", "train", "beta_cycles", "KL annealing cycles");
  o.add<double>(app, "--beta-max", "train", "beta_max", "KL weight at cycle end");
  o.add<std::uint64_t>(app, "--seed", "train", "seed", "training seed");
  o.add<std::size_t>(app, "--d-z", "train", "d_z", "latent width");
  o.add<std::size_t>(app, "--d-c", "train", "d_c", "condition width (even)");
  o.add<double>(app, "--alpha", "hyper", "alpha", "semantic bias on negatives");
  o.add<double>(app, "--tau", "hyper", "tau", "base margin");
  o.add<double>(app, "--beta-u", "hyper", "beta_u", "margin relaxation per unit uncertainty");
  o.add<double>(app, "--gamma", "hyper", "gamma", "uncertainty reweighting");
  o.add<double>(app, "--lambda-temp", "hyper", "lambda_temp", "prototype contrast temperature");
  o.add<double>(app, "--lambda1", "hyper", "lambda1", "weight of the energy loss");
  o.add<double>(app, "--lambda2", "hyper", "lambda2", "weight of the prototype contrast");
}

// ---- commands ---------------------------------------------------------------

void cmd_synth(const Common& c, const std::string& out_flag, bool force) {
  json doc = load_config(c);
  if (!out_flag.empty()) doc["paths"]["out"] = out_flag;
  const json resolved = resolve(doc);
  const fs::path out = resolved["paths"]["out"].get<std::string>();
  if (out.empty()) fail(kExitValidation, "synth: an output directory is required (--out or paths.out)");
  std::error_code ec;
  if (fs::exists(out, ec) && !fs::is_empty(out, ec) && !force) {
    fail(kExitValidation, "synth: '" + out.string() + "' exists and is not empty (use --force)");
  }
  scale_bank* raw = nullptr;
  check(scale_bank_synthesize(resolved.dump().c_str(), &raw));
  BankPtr bank(raw);
  ensure_dir(out);
  check(scale_bank_save(bank.get(), out.c_str()));
  echo_config(resolved, out);
  std::size_t n = 0, seen = 0, unseen = 0;
  check(scale_bank_describe(bank.get(), &n, nullptr, &seen, &unseen));
  std::printf("wrote %zu samples (%zu seen / %zu unseen classes) to %s\n", n, seen, unseen, out.c_str());
}

void cmd_train(const Common& c, const std::string& data_flag, const std::string& out_flag, const std::string& resume) {
  json doc = load_config(c);
  if (!data_flag.empty()) doc["paths"]["data"] = data_flag;
  if (!out_flag.empty()) doc["paths"]["out"] = out_flag;
  const json resolved = resolve(doc);
  const std::string data = resolved["paths"]["data"];
  const fs::path out = resolved["paths"]["out"].get<std::string>();
  if (data.empty()) fail(kExitValidation, "train: a bank directory is required (--data or paths.data)");
  if (out.empty()) fail(kExitValidation, "train: an output directory is required (--out or paths.out)");

  scale_bank* raw_bank = nullptr;
  check(scale_bank_load(data.c_str(), &raw_bank));
  BankPtr bank(raw_bank);
  ensure_dir(out);
  echo_config(resolved, out);
  scale_model* raw_model = nullptr;
  check(scale_train(bank.get(), resolved.dump().c_str(), out.c_str(), resume.empty() ? nullptr : resume.c_str(),
                    &raw_model));
  ModelPtr model(raw_model);
  std::printf("checkpoint: %s\n", (out / "checkpoint.scl").c_str());
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "unseen";
  std::string csv;
};

scale_split parse_split(const std::string& s) {
  if (s == "unseen") return SCALE_SPLIT_UNSEEN;
  if (s == "seen") return SCALE_SPLIT_SEEN;
  fail(kExitValidation, "split must be 'unseen' or 'seen', got '" + s + "'");
}

/// Resolves paths from flags then config; returns the accuracy.
double run_eval(const Common& c, EvalArgs a, bool require_csv) {
  const json resolved = resolve(load_config(c));
  if (a.data.empty()) a.data = resolved["paths"]["data"];
  if (a.checkpoint.empty()) a.checkpoint = resolved["paths"]["checkpoint"];
  if (a.data.empty()) fail(kExitValidation, "a bank directory is required (--data or paths.data)");
  if (a.checkpoint.empty()) fail(kExitValidation, "a checkpoint is required (--checkpoint or paths.checkpoint)");
  if (require_csv && a.csv.empty()) fail(kExitValidation, "export-energies: --out is required");
  const scale_split split = parse_split(a.split);

  scale_model* raw_model = nullptr;
  check(scale_model_load(a.checkpoint.c_str(), &raw_model));
  ModelPtr model(raw_model);
  scale_bank* raw_bank = nullptr;
  check(scale_bank_load(a.data.c_str(), &raw_bank));
  BankPtr bank(raw_bank);

  double accuracy = 0;
  scale_energy_table* raw_table = nullptr;
  check(scale_evaluate(model.get(), bank.get(), split, eval_threads(), &accuracy, &raw_table));
  TablePtr table(raw_table);
  if (!a.csv.empty()) check(scale_energy_table_export(table.get(), a.csv.c_str()));
  return accuracy;
}

struct GradcheckArgs {
  std::uint64_t seed = 0;
  double threshold = 1e-4;
  double step = 1e-5;
  std::string report;
  std::string flip_group;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  scale_micro* raw = nullptr;
  check(scale_micro_create(a.seed, &raw));
  MicroPtr micro(raw);
  const std::size_t n = scale_micro_param_count(micro.get());
  oracle::Vec params(n), analytic(n);
  check(scale_micro_params(micro.get(), params.data()));
  double loss = 0;
  check(scale_micro_gradient(micro.get(), params.data(), &loss, analytic.data()));

  std::vector<oracle::GroupSpan> groups;
  bool flipped = a.flip_group.empty();
  for (std::size_t g = 0; g < scale_micro_group_count(micro.get()); ++g) {
    const char* name = nullptr;
    oracle::GroupSpan span;
    check(scale_micro_group(micro.get(), g, &name, &span.offset, &span.size));
    span.name = name;
    if (span.name == a.flip_group) {
      for (std::size_t i = span.offset; i < span.offset + span.size; ++i) analytic[i] = -analytic[i];
      flipped = true;
    }
    groups.push_back(span);
  }
  if (!flipped) fail(kExitValidation, "gradcheck: unknown parameter group '" + a.flip_group + "'");

  scale_micro* m = micro.get();
  const auto f = [m](const oracle::Vec& p) {
    oracle::FdSample s;
    check(scale_micro_loss(m, p.data(), &s.value, &s.min_abs_preact, &s.signature));
    return s;
  };
  const oracle::FdResult fd = oracle::fd_gradient(f, params, a.step);
  oracle::GradCheckReport report = oracle::compare_gradients(groups, analytic, fd, a.threshold);
  report.seed = a.seed;
  report.step = a.step;
  const std::string text = report.to_json();
  if (!a.report.empty()) write_file(a.report, text + "\n");
  for (const auto& g : report.groups) {
    std::printf("%-24s max_rel_error=%.3e checked=%zu excluded=%zu\n", g.name.c_str(), g.max_rel_error, g.checked,
                g.excluded);
  }
  for (const auto& note : fd.notes) std::fprintf(stderr, "note: %s\n", note.c_str());
  std::printf("%s worst=%s (%.3e)\n", report.pass ? "PASS" : "FAIL", report.worst_group.c_str(), report.worst_error);
  return report.pass ? kExitOk : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Zero-shot skeleton action recognition with a conditional VAE"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(scale_version()));

  Common synth_c, train_c, eval_c, export_c;
  std::string synth_out, train_data, train_out, resume;
  bool force = false;
  EvalArgs eval_a, export_a;
  GradcheckArgs grad_a;

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic feature bank");
  synth->add_option("--config", synth_c.config_path, "JSON config file");
  synth->add_option("--out", synth_out, "bank directory");
  synth->add_flag("--force", force, "write into a non-empty directory");
  add_synth_flags(synth, synth_c.overlay);

  CLI::App* train = app.add_subcommand("train", "train a model on a bank");
  train->add_option("--config", train_c.config_path, "JSON config file");
  train->add_option("--data", train_data, "bank directory");
  train->add_option("--out", train_out, "run directory");
  train->add_option("--resume", resume, "checkpoint to resume from");
  add_train_flags(train, train_c.overlay);

  CLI::App* eval = app.add_subcommand("eval", "zero-shot top-1 accuracy");
  eval->add_option("--config", eval_c.config_path, "JSON config file");
  eval->add_option("--checkpoint", eval_a.checkpoint, "checkpoint file");
  eval->add_option("--data", eval_a.data, "bank directory");
  eval->add_option("--split", eval_a.split, "unseen or seen")->check(CLI::IsMember({"unseen", "seen"}));
  eval->add_option("--csv", eval_a.csv, "also write the energy table here");

  CLI::App* exp = app.add_subcommand("export-energies", "write the per-candidate energy table as CSV");
  exp->add_option("--config", export_c.config_path, "JSON config file");
  exp->add_option("--checkpoint", export_a.checkpoint, "checkpoint file");
  exp->add_option("--data", export_a.data, "bank directory");
  exp->add_option("--split", export_a.split, "unseen or seen")->check(CLI::IsMember({"unseen", "seen"}));
  exp->add_option("--out", export_a.csv, "CSV path");

  CLI::App* grad = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
  grad->add_option("--seed", grad_a.seed, "micro-model seed");
  grad->add_option("--threshold", grad_a.threshold, "maximum relative error");
  grad->add_option("--step", grad_a.step, "finite-difference step");
  grad->add_option("--report", grad_a.report, "write the JSON report here");
  grad->add_option("--flip-group", grad_a.flip_group)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (synth->parsed()) {
      cmd_synth(synth_c, synth_out, force);
    } else if (train->parsed()) {
      cmd_train(train_c, train_data, train_out, resume);
    } else if (eval->parsed()) {
      std::printf("%.4f\n", run_eval(eval_c, eval_a, false));
    } else if (exp->parsed()) {
      const double acc = run_eval(export_c, export_a, true);
      std::printf("%.4f\n", acc);
    } else if (grad->parsed()) {
      return cmd_gradcheck(grad_a);
    }
  } catch (const CliFailure& f) {
    std::fprintf(stderr, "error: %s\n", f.message.c_str());
    return f.code;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  }
  return kExitOk;
}
