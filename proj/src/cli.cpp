// Copyright 2026 The RetroQuant Authors
// SPDX-License-Identifier: Apache-2.0

#include "retroquant/cli.hpp"

#include <CLI11.hpp>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <json.hpp>
#include <limits>
#include <optional>

#include "retroquant/error.hpp"
#include "retroquant/file_util.hpp"
#include "retroquant/harness.hpp"
#include "retroquant/hybrid.hpp"
#include "retroquant/model_io.hpp"
#include "retroquant/parallel.hpp"
#include "retroquant/reports.hpp"
#include "retroquant/retro_synthesis.hpp"

namespace retroquant::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

struct TrainArgs {
  std::string arch = "cnn_bn";
  std::string data;
  std::size_t per_class = 100;
  std::size_t epochs = 8;
  double lr = 0.05;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  std::uint64_t seed = 42;
  std::string out;
};

struct SynthArgs {
  std::string kind = "synthetic";
  std::size_t classes = kDefaultClassCount;
  std::size_t per_class = 100;
  std::size_t count = 1000;
  double noise = 2.0;
  std::uint64_t template_seed = kDefaultTemplateSeed;
  std::uint64_t seed = 42;
  std::string out;
};

struct GenArgs {
  std::string model;
  std::size_t per_class = 32;
  std::size_t epochs = 500;
  double lr = 0.05;
  std::size_t batch_size = 32;
  double w_bn = 1.0;
  double w_g = 1.0;
  double w_c = 1.0;
  std::uint64_t seed = 42;
  std::string out;
};

struct CalibrateArgs {
  std::string model;
  std::string calib;
  int abits = 8;
  std::string out;
};

struct QuantizeArgs {
  std::string model;
  std::string calib;
  std::string scheme = "pt";
  double th = 0.0;
  int wbits = 8;
  int abits = 8;
  std::string out;
};

struct EvalArgs {
  std::string model;
  std::string data;
  std::string out;
};

struct SensitivityArgs {
  std::string model;
  std::string real;
  std::string retro;
  std::string random;
  std::string scheme = "pt";
  int bits = 8;
  std::uint64_t seed = 42;
  std::string out;
};

struct ReportArgs {
  std::string model;
  std::string calib;
  std::string data;
  double th = 0.0;
  std::string out;
};

[[noreturn]] void usage(const std::string& msg) { fail(ErrorKind::UsageError, msg); }

template <typename E, typename Parse>
E parse_enum(const std::string& text, const char* what, Parse parse) {
  const auto v = parse(text);
  if (!v) usage(std::string("unknown ") + what + " '" + text + "'");
  return *v;
}

int check_bits_flag(int bits, const char* flag) {
  if (bits != kPassthroughBits && (bits < 2 || bits > 16))
    usage(std::string(flag) + " must be in [2, 16] or 32, got " + std::to_string(bits));
  return bits;
}

void write_text(const fs::path& path, const std::string& text) { write_file_atomic(path, text); }

void echo(std::ostream& out, const std::string& line) { out << line << "\n"; }

int cmd_train(const TrainArgs& a, std::ostream& out) {
  const Arch arch = parse_enum<Arch>(a.arch, "arch", parse_arch);
  const LabeledDataset data = a.data.empty()
                                  ? synth_dataset(a.seed, kDefaultClassCount, a.per_class,
                                                  kDefaultInputShape)
                                  : load_dataset(a.data);
  TrainConfig cfg;
  cfg.epochs = a.epochs;
  cfg.learning_rate = a.lr;
  cfg.momentum = a.momentum;
  cfg.batch_size = a.batch_size;
  cfg.seed = a.seed;
  const TrainResult r = train_reference(arch, data, cfg);
  const EvalReport train_eval = evaluate(r.model, data);
  save_model(r.model, a.out);
  json j;
  j["arch"] = a.arch;
  j["seed"] = a.seed;
  j["data_seed"] = data.seed;
  j["epochs"] = a.epochs;
  j["learning_rate"] = json_double(a.lr);
  j["momentum"] = json_double(a.momentum);
  j["batch_size"] = a.batch_size;
  j["parameters"] = r.model.parameter_count();
  j["train_accuracy"] = json_double(train_eval.accuracy);
  json losses = json::array();
  for (double l : r.epoch_losses) losses.push_back(json_double(l));
  j["epoch_losses"] = std::move(losses);
  write_text(fs::path(a.out) / "train.json", j.dump(2) + "\n");
  write_text(fs::path(a.out) / "train.csv", training_csv(r.epoch_losses));
  echo(out, "trained " + a.arch + ": train accuracy " + format_g9(train_eval.accuracy));
  return kExitOk;
}

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  LabeledDataset ds;
  if (a.kind == "synthetic") {
    SynthOptions opts;
    opts.noise_std = static_cast<float>(a.noise);
    opts.template_seed = a.template_seed;
    ds = synth_dataset(a.seed, a.classes, a.per_class, kDefaultInputShape, opts);
  } else if (a.kind == "random-gaussian") {
    ds = random_gaussian_dataset(a.seed, a.count, kDefaultInputShape, a.classes);
  } else {
    usage("unknown dataset kind '" + a.kind + "'");
  }
  save_dataset(ds, a.out);
  echo(out, "wrote " + std::to_string(ds.size()) + " samples to " + a.out);
  return kExitOk;
}

int cmd_gen(const GenArgs& a, std::ostream& out) {
  const Model model = load_model(a.model);
  GenConfig cfg;
  cfg.epochs = a.epochs;
  cfg.learning_rate = a.lr;
  cfg.batch_size = a.batch_size;
  cfg.seed = a.seed;
  cfg.loss_weights = {a.w_bn, a.w_g, a.w_c};
  cfg.validate(model);
  const LabeledDataset ds = generate_dataset(model, a.per_class, cfg);
  save_dataset(ds, a.out);
  json j;
  j["seed"] = a.seed;
  j["per_class"] = a.per_class;
  j["epochs"] = a.epochs;
  j["learning_rate"] = json_double(a.lr);
  j["batch_size"] = a.batch_size;
  j["loss_weights"] = {{"bn", json_double(a.w_bn)}, {"g", json_double(a.w_g)},
                       {"c", json_double(a.w_c)}};
  write_text(fs::path(a.out) / "gen.json", j.dump(2) + "\n");
  echo(out, "generated " + std::to_string(ds.size()) + " samples to " + a.out);
  return kExitOk;
}

int cmd_calibrate(const CalibrateArgs& a, std::ostream& out) {
  const Model model = load_model(a.model);
  const LabeledDataset calib = load_dataset(a.calib);
  const ActivationCalibration cal = calibrate_activations(model, calib, a.abits);
  write_text(fs::path(a.out) / "calibration.json", calibration_json(cal, calib.seed));
  write_text(fs::path(a.out) / "calibration.csv", calibration_csv(cal));
  echo(out, "calibrated " + std::to_string(cal.ranges.size()) + " activation points");
  return kExitOk;
}

int cmd_quantize(const QuantizeArgs& a, std::ostream& out) {
  const Model model = load_model(a.model);
  const LabeledDataset calib = load_dataset(a.calib);
  if (std::isnan(a.th)) usage("--th must not be NaN");
  const std::size_t n = model.quantizable_layers().size();
  std::vector<WeightScheme> schemes;
  std::optional<SchemeAssignment> assignment;
  if (a.scheme == "hybrid") {
    const int bits = a.wbits == kPassthroughBits ? 8 : a.wbits;
    assignment = hybrid_assign(model, calib, a.th, bits);
    schemes = assignment->schemes();
  } else {
    schemes.assign(n, parse_enum<WeightScheme>(a.scheme, "scheme", parse_weight_scheme));
  }
  const ActivationCalibration cal = calibrate_activations(model, calib, a.abits);
  QuantModel qm = build_quant_model(model, schemes, cal, a.wbits, a.abits);
  qm.seed = calib.seed;
  save_quant_model(qm, a.out);
  if (assignment) {
    write_text(fs::path(a.out) / "hybrid.json", hybrid_json(*assignment, a.wbits, calib.seed));
    write_text(fs::path(a.out) / "hybrid.csv", hybrid_csv(*assignment));
    const PcFraction f = pc_layer_fraction(*assignment);
    echo(out, "hybrid: " + std::to_string(f.pc_count) + " of " + std::to_string(f.total) +
                  " layers per-channel");
  }
  echo(out, "quantized model written to " + a.out);
  return kExitOk;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const LabeledDataset data = load_dataset(a.data);
  const EvalReport r = is_quant_model_directory(a.model) ? evaluate(load_quant_model(a.model), data)
                                                         : evaluate(load_model(a.model), data);
  const std::vector<EvalReport> rows{r};
  write_text(fs::path(a.out) / "eval.json", eval_json(rows, data.seed));
  write_text(fs::path(a.out) / "eval.csv", eval_csv(rows));
  echo(out, "accuracy " + format_g9(r.accuracy) + " (" + std::to_string(r.correct) + "/" +
                std::to_string(r.sample_count) + ")");
  return kExitOk;
}

int cmd_sensitivity(const SensitivityArgs& a, std::ostream& out) {
  const Model model = load_model(a.model);
  const WeightScheme scheme = parse_enum<WeightScheme>(a.scheme, "scheme", parse_weight_scheme);
  if (scheme == WeightScheme::NonUniform) usage("sensitivity supports --scheme pt or pc");
  const LabeledDataset real = load_dataset(a.real);
  const LabeledDataset retro = load_dataset(a.retro);
  const LabeledDataset random =
      a.random.empty()
          ? random_gaussian_dataset(a.seed, retro.size(), model.input_shape, model.class_count)
          : load_dataset(a.random);
  const SensitivityReport r = sensitivity_report(model, real, retro, random, scheme, a.bits);
  write_text(fs::path(a.out) / "sensitivity.json", sensitivity_json(r, a.seed));
  write_text(fs::path(a.out) / "sensitivity.csv", sensitivity_csv(r));
  echo(out, "d(retro, real) " + format_g9(r.d_retro_real) + ", d(random, real) " +
                format_g9(r.d_random_real));
  return kExitOk;
}

int cmd_report(const ReportArgs& a, std::ostream& out) {
  const Model model = load_model(a.model);
  const LabeledDataset calib = load_dataset(a.calib);
  const LabeledDataset data = load_dataset(a.data);
  const std::size_t n = model.quantizable_layers().size();
  std::vector<EvalReport> rows{evaluate(model, data)};
  const ActivationCalibration cal = calibrate_activations(model, calib, 8);
  for (int wbits : {8, 6, 4}) {
    const SchemeAssignment hybrid = hybrid_assign(model, calib, a.th, wbits);
    const std::vector<std::pair<std::string, std::vector<WeightScheme>>> variants{
        {"pt", std::vector<WeightScheme>(n, WeightScheme::PerTensor)},
        {"pc", std::vector<WeightScheme>(n, WeightScheme::PerChannel)},
        {"hybrid", hybrid.schemes()},
        {"nonuniform", std::vector<WeightScheme>(n, WeightScheme::NonUniform)}};
    for (const auto& [name, schemes] : variants) {
      EvalReport r = evaluate(build_quant_model(model, schemes, cal, wbits, 8), data);
      r.scheme = name;
      rows.push_back(std::move(r));
    }
  }
  write_text(fs::path(a.out) / "report.json", eval_json(rows, calib.seed));
  write_text(fs::path(a.out) / "report.csv", eval_csv(rows));
  for (const EvalReport& r : rows)
    echo(out, r.scheme + " W" + std::to_string(r.weight_bits) + "A" +
                  std::to_string(r.activation_bits) + " " + format_g9(r.accuracy));
  return kExitOk;
}

void apply_threads(std::optional<std::size_t> flag) {
  if (flag) {
    set_max_threads(*flag);
    return;
  }
  if (const char* env = std::getenv("RETROQUANT_THREADS")) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0') usage("RETROQUANT_THREADS is not a number");
    set_max_threads(static_cast<std::size_t>(v));
  }
}

}  // namespace

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Data-free post-training quantization toolkit", "retroquant"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Read flags from a TOML/INI config file");
  app.allow_config_extras(false);
  app.option_defaults()->always_capture_default();
  bool print_config = false;
  app.add_flag("--print-config", print_config,
               "Print the effective configuration and exit");
  std::optional<std::size_t> threads;
  app.add_option("--threads", threads,
                 "Worker thread cap (falls back to RETROQUANT_THREADS, then all cores)");

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train an FP32 reference model");
  c_train->add_option("--arch", train.arch, "cnn_bn | cnn_plain | mlp | cnn_deep");
  c_train->add_option("--data", train.data, "Training dataset directory (default: synthesize)");
  c_train->add_option("--per-class", train.per_class, "Synthesized samples per class");
  c_train->add_option("--epochs", train.epochs, "Training epochs");
  c_train->add_option("--lr", train.lr, "SGD learning rate");
  c_train->add_option("--momentum", train.momentum, "SGD momentum");
  c_train->add_option("--batch-size", train.batch_size, "Minibatch size");
  c_train->add_option("--seed", train.seed, "Seed for init, shuffling and synthesized data");
  c_train->add_option("--out", train.out, "Output model directory")->required();

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth-data", "Write a synthetic or random dataset");
  c_synth->add_option("--kind", synth.kind, "synthetic | random-gaussian");
  c_synth->add_option("--classes", synth.classes, "Class count");
  c_synth->add_option("--per-class", synth.per_class, "Samples per class (synthetic)");
  c_synth->add_option("--count", synth.count, "Sample count (random-gaussian)");
  c_synth->add_option("--noise", synth.noise, "Noise standard deviation (synthetic)");
  c_synth->add_option("--template-seed", synth.template_seed, "Seed of the class templates");
  c_synth->add_option("--seed", synth.seed, "Sample seed");
  c_synth->add_option("--out", synth.out, "Output dataset directory")->required();

  GenArgs gen;
  auto* c_gen = app.add_subcommand("gen", "Generate retro-synthesis calibration data");
  c_gen->add_option("--model", gen.model, "FP32 model directory")->required();
  c_gen->add_option("--per-class", gen.per_class, "Samples per class");
  c_gen->add_option("--epochs", gen.epochs, "Optimization epochs per batch");
  c_gen->add_option("--lr", gen.lr, "Adam learning rate");
  c_gen->add_option("--batch-size", gen.batch_size, "Samples optimized jointly");
  c_gen->add_option("--w-bn", gen.w_bn, "Weight of the BatchNorm statistics loss");
  c_gen->add_option("--w-g", gen.w_g, "Weight of the input Gaussian loss");
  c_gen->add_option("--w-c", gen.w_c, "Weight of the class loss");
  c_gen->add_option("--seed", gen.seed, "Generation seed");
  c_gen->add_option("--out", gen.out, "Output dataset directory")->required();

  CalibrateArgs calibrate;
  auto* c_cal = app.add_subcommand("calibrate", "Calibrate activation ranges");
  c_cal->add_option("--model", calibrate.model, "FP32 model directory")->required();
  c_cal->add_option("--calib", calibrate.calib, "Calibration dataset directory")->required();
  c_cal->add_option("--abits", calibrate.abits, "Activation bits (32 disables)");
  c_cal->add_option("--out", calibrate.out, "Output directory")->required();

  QuantizeArgs quantize;
  auto* c_q = app.add_subcommand("quantize", "Quantize a model");
  c_q->add_option("--model", quantize.model, "FP32 model directory")->required();
  c_q->add_option("--calib", quantize.calib, "Calibration dataset directory")->required();
  c_q->add_option("--scheme", quantize.scheme, "pt | pc | hybrid | nonuniform");
  c_q->add_option("--th", quantize.th, "Hybrid threshold on error_pt - error_pc");
  c_q->add_option("--wbits", quantize.wbits, "Weight bits (32 disables)");
  c_q->add_option("--abits", quantize.abits, "Activation bits (32 disables)");
  c_q->add_option("--out", quantize.out, "Output quantized model directory")->required();

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "Top-1 accuracy of a model or quantized model");
  c_eval->add_option("--model", eval.model, "Model or quantized model directory")->required();
  c_eval->add_option("--data", eval.data, "Labeled dataset directory")->required();
  c_eval->add_option("--out", eval.out, "Output report directory")->required();

  SensitivityArgs sens;
  auto* c_sens = app.add_subcommand("sensitivity", "Per-layer sensitivity profiles");
  c_sens->add_option("--model", sens.model, "FP32 model directory")->required();
  c_sens->add_option("--real", sens.real, "Real-data dataset directory")->required();
  c_sens->add_option("--retro", sens.retro, "Retro-synthesis dataset directory")->required();
  c_sens->add_option("--random", sens.random,
                     "Random dataset directory (default: Gaussian, same size as retro)");
  c_sens->add_option("--scheme", sens.scheme, "pt | pc");
  c_sens->add_option("--bits", sens.bits, "Weight bits");
  c_sens->add_option("--seed", sens.seed, "Seed of the default random dataset");
  c_sens->add_option("--out", sens.out, "Output report directory")->required();

  ReportArgs report;
  auto* c_report = app.add_subcommand("report", "Accuracy table across schemes and bit widths");
  c_report->add_option("--model", report.model, "FP32 model directory")->required();
  c_report->add_option("--calib", report.calib, "Calibration dataset directory")->required();
  c_report->add_option("--data", report.data, "Evaluation dataset directory")->required();
  c_report->add_option("--th", report.th, "Hybrid threshold");
  c_report->add_option("--out", report.out, "Output report directory")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: kind=UsageError message=" << e.what() << "\n";
    err << app.help();
    return kExitUsage;
  }
  if (print_config) {
    out << app.config_to_str(true, false);
    return kExitOk;
  }

  try {
    apply_threads(threads);
    if (*c_train) return cmd_train(train, out);
    if (*c_synth) return cmd_synth(synth, out);
    if (*c_gen) return cmd_gen(gen, out);
    if (*c_cal) {
      check_bits_flag(calibrate.abits, "--abits");
      return cmd_calibrate(calibrate, out);
    }
    if (*c_q) {
      check_bits_flag(quantize.wbits, "--wbits");
      check_bits_flag(quantize.abits, "--abits");
      return cmd_quantize(quantize, out);
    }
    if (*c_eval) return cmd_eval(eval, out);
    if (*c_sens) {
      check_bits_flag(sens.bits, "--bits");
      return cmd_sensitivity(sens, out);
    }
    if (*c_report) return cmd_report(report, out);
    usage("no subcommand");
  } catch (const Error& e) {
    err << "error: kind=" << e.kind_name() << " message=" << e.what() << "\n";
    return e.kind() == ErrorKind::UsageError ? kExitUsage : kExitPipelineError;
  } catch (const std::exception& e) {
    err << "error: kind=Internal message=" << e.what() << "\n";
    return kExitPipelineError;
  }
}

}  // namespace retroquant::cli
