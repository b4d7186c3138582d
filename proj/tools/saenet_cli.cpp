#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <type_traits>

#include "saenet/checkpoint.hpp"
#include "saenet/checks.hpp"
#include "saenet/dataio.hpp"
#include "saenet/gradcheck.hpp"
#include "saenet/model.hpp"
#include "saenet/optim.hpp"

namespace fs = std::filesystem;
using namespace saenet;

namespace {

struct Opts {
  std::string preset_name;
  std::string data_dir;
  std::string out_dir = "run";
  std::string ckpt;
  std::string manifest;
  std::string merge = "concat";
  std::string gate_placement = "output";
  std::string dtype = "f32";
  std::string gc_dtype = "f64";
  int64_t seed = 0;
  int64_t reduction = 32;
  int64_t cardinality = 4;
  double tol = 1e-4;
  bool resize224 = false;
  bool no_augment = false;
  TrainConfig train;
  int64_t classes = 8;
  int64_t per_class = 32;
  int64_t val_per_class = 8;
  int64_t side = 16;
  int64_t noise = 12;
  int64_t summary_side = 0;
};

std::string joined(const std::vector<std::string>& names) {
  std::string out;
  for (const auto& n : names) out += (out.empty() ? "" : ", ") + n;
  return out;
}

void add_arch_flags(CLI::App* sub, Opts& o) {
  sub->add_option("--preset", o.preset_name, "architecture preset (" + joined(preset_names()) + ")")
      ->required();
  sub->add_option("--reduction", o.reduction, "squeeze reduction ratio r, overrides the preset");
  sub->add_option("--cardinality", o.cardinality, "gate branch count, overrides the preset");
  sub->add_option("--merge", o.merge, "gate branch merge mode")
      ->check(CLI::IsMember({"concat", "sum"}));
  sub->add_option("--gate-placement", o.gate_placement, "tensor the gate squeezes")
      ->check(CLI::IsMember({"output", "input"}));
}

void add_dtype_flag(CLI::App* sub, Opts& o) {
  sub->add_option("--dtype", o.dtype, "compute precision")->check(CLI::IsMember({"f32", "f64"}));
}

// Preset values stay in force unless the flag was given explicitly.
ArchSpec build_arch(const CLI::App* sub, const Opts& o) {
  ArchSpec a = preset(o.preset_name);
  if (sub->count("--reduction")) a.sae.reduction = o.reduction;
  if (sub->count("--cardinality")) a.sae.cardinality = o.cardinality;
  if (sub->count("--merge")) a.sae.merge = parse_merge(o.merge);
  if (sub->count("--gate-placement")) a.sae.gate_placement = parse_gate_placement(o.gate_placement);
  return a;
}

std::string manifest_for(const Opts& o) {
  if (!o.manifest.empty()) return o.manifest;
  return (fs::path(o.ckpt).parent_path() / "manifest.csv").string();
}

template <typename T>
int run_train(const CLI::App* sub, const Opts& o) {
  auto [train_ds, test_ds] = load_cifar100(o.data_dir);
  ArchSpec arch = build_arch(sub, o);
  TrainConfig cfg = o.train;
  cfg.seed = o.seed;
  cfg.f64 = std::is_same_v<T, double>;
  cfg.augment = !o.no_augment;
  Preproc train_pp = cifar_train_preproc();
  Preproc eval_pp = cifar_eval_preproc();
  if (o.resize224) {
    train_pp.target_size = 224;
    eval_pp.target_size = 224;
  }
  Model<T> model(arch, static_cast<uint64_t>(cfg.seed));
  TrainResult res = train_model(model, train_ds, test_ds, cfg, train_pp, eval_pp, o.out_dir);
  for (const Metrics& m : res.log)
    std::printf("epoch %lld: lr %.8g train_loss %.6f val_top1 %.4f val_top5 %.4f\n",
                static_cast<long long>(m.epoch), lr_at_epoch(cfg, m.epoch), m.mean_loss, m.top1,
                m.top5);
  std::printf("trained %lld steps, train top1 %.4f\n", static_cast<long long>(res.steps),
              res.train_top1);
  std::printf("artifacts: %s %s\n", res.metrics_path.c_str(), res.ckpt_path.c_str());
  return 0;
}

template <typename T>
int run_eval(const CLI::App* sub, const Opts& o) {
  auto [train_ds, test_ds] = load_cifar100(o.data_dir);
  (void)train_ds;
  Model<T> model(build_arch(sub, o), static_cast<uint64_t>(o.seed));
  if (!o.ckpt.empty()) load_checkpoint(model, o.ckpt, manifest_for(o));
  Preproc pp = cifar_eval_preproc();
  if (o.resize224) pp.target_size = 224;
  Metrics m = evaluate(model, test_ds, pp, o.train.batch_size);
  std::printf("top1 %.4f top5 %.4f loss %.6f\n", m.top1, m.top5, m.mean_loss);
  return 0;
}

int run_gradcheck(const Opts& o) {
  if (o.gc_dtype != "f64")
    throw ConfigError("gradcheck runs in 64-bit only; pass --dtype f64 or omit the flag");
  Rng rng(static_cast<uint64_t>(o.seed));
  CheckTarget<double> target = named_check(o.preset_name, rng);
  GradCheckReport<double> report = grad_check(target, o.tol, rng);
  std::cout << format_report(report, target.name) << "\n";
  return report.pass ? 0 : 2;
}

int run_params(const CLI::App* sub, const Opts& o) {
  ArchSpec arch = build_arch(sub, o);
  Model<float> model(arch, static_cast<uint64_t>(o.seed));
  int64_t side = o.summary_side > 0 ? o.summary_side : (arch.stem.maxpool ? 224 : 32);
  std::cout << summarize(model, side, side).to_csv();
  return 0;
}

int run_export_filters(const CLI::App* sub, const Opts& o) {
  ArchSpec arch = build_arch(sub, o);
  Model<float> model(arch, static_cast<uint64_t>(o.seed));
  if (!o.ckpt.empty()) load_checkpoint(model, o.ckpt, manifest_for(o));
  export_first_conv_filters(model, o.out_dir);
  std::printf("wrote %lld filters and a montage to %s\n",
              static_cast<long long>(arch.stem.out_channels), o.out_dir.c_str());
  return 0;
}

int run_make_synthetic(const Opts& o) {
  std::array<int64_t, 3> chw = {3, o.side, o.side};
  uint64_t seed = static_cast<uint64_t>(o.seed);
  Dataset train = synthetic_dataset(o.classes, o.per_class, chw, seed, o.noise);
  Dataset test = synthetic_dataset(o.classes, o.val_per_class, chw, seed + 1, o.noise);
  fs::create_directories(o.out_dir);
  write_cifar_bin((fs::path(o.out_dir) / "train.bin").string(), train);
  write_cifar_bin((fs::path(o.out_dir) / "test.bin").string(), test);
  std::printf("wrote %lld train and %lld test records to %s\n", static_cast<long long>(train.n),
              static_cast<long long>(test.n), o.out_dir.c_str());
  return 0;
}

// Innermost subcommand the parser reached, for help and error text.
CLI::App* active_app(CLI::App* app) {
  while (!app->get_subcommands().empty()) app = app->get_subcommands().front();
  return app;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"squeeze-aggregated-excitation network trainer"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  Opts o;

  CLI::App* train = app.add_subcommand("train", "train a preset on a CIFAR-100 layout corpus");
  add_arch_flags(train, o);
  train->add_option("--data", o.data_dir, "directory holding train.bin and test.bin")->required();
  train->add_option("--out", o.out_dir, "run directory for metrics.csv and best.ckpt");
  train->add_option("--seed", o.seed, "master seed for init and shuffling");
  train->add_option("--epochs", o.train.epochs, "training epochs");
  train->add_option("--batch-size", o.train.batch_size, "samples per update");
  train->add_option("--lr", o.train.lr0, "initial learning rate");
  train->add_option("--momentum", o.train.momentum, "SGD momentum");
  train->add_option("--weight-decay", o.train.weight_decay, "coupled L2 strength");
  train->add_option("--step-epochs", o.train.step_epochs, "epochs between 10x lr drops");
  train->add_option("--decay", o.train.decay, "lr multiplier at each step");
  train->add_option("--max-steps", o.train.max_steps, "stop after this many updates, 0 = run out the epochs");
  train->add_flag("--no-augment", o.no_augment, "disable random crop and horizontal flip");
  train->add_flag("--resize-224", o.resize224, "bilinear-resize inputs to 224x224");
  add_dtype_flag(train, o);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_arch_flags(eval, o);
  eval->add_option("--data", o.data_dir, "directory holding train.bin and test.bin")->required();
  eval->add_option("--ckpt", o.ckpt, "checkpoint to load, fresh init when omitted");
  eval->add_option("--manifest", o.manifest, "tensor manifest, default manifest.csv beside the checkpoint");
  eval->add_option("--batch-size", o.train.batch_size, "evaluation batch size");
  eval->add_option("--seed", o.seed, "init seed when no checkpoint is given");
  eval->add_flag("--resize-224", o.resize224, "bilinear-resize inputs to 224x224");
  add_dtype_flag(eval, o);

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of one target");
  gradcheck->add_option("--preset", o.preset_name, "target (" + joined(check_names()) + ")")
      ->required();
  gradcheck->add_option("--tol", o.tol, "relative error tolerance");
  gradcheck->add_option("--seed", o.seed, "draw seed for inputs and weights");
  gradcheck->add_option("--dtype", o.gc_dtype, "compute precision, f64 only")
      ->check(CLI::IsMember({"f32", "f64"}));

  CLI::App* params = app.add_subcommand("params", "print the layer summary CSV");
  add_arch_flags(params, o);
  params->add_option("--seed", o.seed, "init seed");
  params->add_option("--side", o.summary_side, "input side, 0 = preset native size");

  CLI::App* export_filters =
      app.add_subcommand("export-filters", "write stem conv filters as PGM images");
  add_arch_flags(export_filters, o);
  export_filters->add_option("--out", o.out_dir, "output directory")->required();
  export_filters->add_option("--ckpt", o.ckpt, "checkpoint to load, fresh init when omitted");
  export_filters->add_option("--manifest", o.manifest,
                             "tensor manifest, default manifest.csv beside the checkpoint");
  export_filters->add_option("--seed", o.seed, "init seed when no checkpoint is given");

  CLI::App* make_synthetic =
      app.add_subcommand("make-synthetic", "generate a balanced synthetic corpus");
  make_synthetic->add_option("--out", o.out_dir, "output directory")->required();
  make_synthetic->add_option("--classes", o.classes, "number of classes");
  make_synthetic->add_option("--per-class", o.per_class, "training samples per class");
  make_synthetic->add_option("--val-per-class", o.val_per_class, "test samples per class");
  make_synthetic->add_option("--side", o.side, "square image side");
  make_synthetic->add_option("--noise", o.noise, "uniform pixel noise amplitude");
  make_synthetic->add_option("--seed", o.seed, "noise seed, test split draws from seed+1");

  try {
    app.parse(argc, argv);
    if (train->parsed())
      return o.dtype == "f64" ? run_train<double>(train, o) : run_train<float>(train, o);
    if (eval->parsed())
      return o.dtype == "f64" ? run_eval<double>(eval, o) : run_eval<float>(eval, o);
    if (gradcheck->parsed()) return run_gradcheck(o);
    if (params->parsed()) return run_params(params, o);
    if (export_filters->parsed()) return run_export_filters(export_filters, o);
    if (make_synthetic->parsed()) return run_make_synthetic(o);
    return 1;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      CLI::App* a = active_app(&app);
      std::cout << (a == &app ? app.help("", CLI::AppFormatMode::All) : a->help());
      return 0;
    }
    std::cerr << "error: " << e.what() << "\n\n" << active_app(&app)->help();
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const DegenerateBatchError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
