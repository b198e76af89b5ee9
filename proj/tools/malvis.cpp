// malvis — malware byte-plot conversion and family classification.
//
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
// failure (diverged loss, failed gradient check).

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "malvis/config.hpp"
#include "malvis/dataset.hpp"
#include "malvis/error.hpp"
#include "malvis/nn.hpp"
#include "malvis/pe.hpp"
#include "malvis/pgm.hpp"
#include "malvis/snapshot.hpp"
#include "malvis/train.hpp"

namespace fs = std::filesystem;
using namespace malvis;

namespace {

int exit_code_for(errc code) {
  switch (code) {
    case errc::config_error:
    case errc::unknown_architecture:
    case errc::incompatible_shape:
    case errc::shape_mismatch:
    case errc::label_out_of_range:
      return 1;
    case errc::diverged_loss:
      return 3;
    default:
      return 2;
  }
}

std::vector<std::uint8_t> read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(errc::io_failure, "cannot open '" + path.string() + "'");
  std::vector<char> data((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>{});
  return std::vector<std::uint8_t>(data.begin(), data.end());
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(errc::io_failure, "cannot open '" + path.string() + "' for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) raise(errc::io_failure, "failed writing '" + path.string() + "'");
}

// ---- convert ------------------------------------------------------------------

struct ConvertArgs {
  std::vector<std::string> inputs;
  std::string out_dir = ".";
  std::string width = "auto";
  bool sections = false;
};

int run_convert(const ConvertArgs& args) {
  std::size_t fixed_width = 0;  // 0 = auto
  if (args.width != "auto") {
    try {
      fixed_width = std::stoul(args.width);
    } catch (...) {
      std::cerr << "error: --width must be 'auto' or a positive integer\n";
      return 1;
    }
    if (fixed_width == 0) {
      std::cerr << "error: --width must be >= 1\n";
      return 1;
    }
  }

  std::vector<fs::path> files;
  for (const std::string& input : args.inputs) {
    const fs::path p(input);
    if (fs::is_directory(p)) {
      std::vector<fs::path> dir_files;
      for (const auto& entry : fs::recursive_directory_iterator(p))
        if (entry.is_regular_file()) dir_files.push_back(entry.path());
      std::sort(dir_files.begin(), dir_files.end());
      files.insert(files.end(), dir_files.begin(), dir_files.end());
    } else {
      files.push_back(p);
    }
  }
  if (files.empty()) {
    std::cerr << "error: no input files\n";
    return 2;
  }

  fs::create_directories(args.out_dir);
  bool any_failed = false;
  for (const fs::path& file : files) {
    try {
      const std::vector<std::uint8_t> bytes = read_file_bytes(file);
      if (args.sections) {
        try {
          for (const SectionRecord& s : parse_sections(bytes))
            std::cout << "# section " << s.name << " offset=" << s.file_offset
                      << " size=" << s.file_size << " characteristics=0x" << std::hex
                      << s.characteristics << std::dec << "\n";
        } catch (const Error& e) {
          std::cout << "# sections unavailable: " << e.what() << "\n";
        }
      }
      const std::size_t width = fixed_width ? fixed_width : choose_width(bytes.size());
      const GrayImage image = render_image(bytes, width);
      const fs::path out_path = fs::path(args.out_dir) / (file.filename().string() + ".pgm");
      write_pgm(image, out_path);
      std::cout << file.string() << " " << bytes.size() << " " << image.width << " "
                << image.height << "\n";
    } catch (const Error& e) {
      std::cerr << "error: " << file.string() << ": " << e.what() << "\n";
      any_failed = true;
    }
  }
  return any_failed ? 2 : 0;
}

// ---- split ---------------------------------------------------------------------

SplitSpec parse_fractions(const std::string& text, std::uint64_t seed) {
  SplitSpec spec;
  spec.seed = seed;
  double values[3];
  std::size_t pos = 0;
  for (int i = 0; i < 3; ++i) {
    const std::size_t comma = text.find(',', pos);
    const std::string part =
        comma == std::string::npos ? text.substr(pos) : text.substr(pos, comma - pos);
    try {
      values[i] = std::stod(part);
    } catch (...) {
      raise(errc::config_error, "--fractions: '" + part + "' is not a number");
    }
    if (comma == std::string::npos && i != 2)
      raise(errc::config_error, "--fractions needs three comma-separated values");
    pos = comma + 1;
  }
  spec.train_fraction = values[0];
  spec.val_fraction = values[1];
  spec.test_fraction = values[2];
  return spec;
}

// ---- train helpers ----------------------------------------------------------------

RunConfig resolve_run_config(const std::string& config_path,
                             const std::vector<std::string>& overrides) {
  KeyValueConfig kv;
  if (!config_path.empty()) kv = KeyValueConfig::parse_file(config_path);
  for (const std::string& pair : overrides) kv.set_pair(pair);
  return RunConfig::resolve(std::move(kv));
}

// Trains one architecture on existing splits and writes
// snapshot/history/resolved config into out_dir.
EvalReport train_and_eval(RunConfig config, const SplitResult& splits, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  if (config.model.num_classes == 0)
    config.model.num_classes = splits.train.families.size();
  config.output_dir = out_dir;

  Model model = build_model(config.model);
  config.model = model.spec();  // head coercion for the SVM hybrids
  write_text_file(out_dir / "config.resolved", config.to_text());

  const TrainHistory history = train(model, splits.train, splits.val, config.train, &std::cout);
  write_text_file(out_dir / "history.csv", render_history_csv(history));
  save_snapshot(model, out_dir / "model.mvsnap");

  const std::string id = architecture_name(config.model.architecture);
  EvalReport report = evaluate(model, splits.test, id, "test");
  emit_report(report, ReportFormat::csv, out_dir / (id + ".report.csv"));
  emit_report(report, ReportFormat::markdown, out_dir / (id + ".report.md"));
  return report;
}

std::string model_id_from_report_path(const fs::path& path) {
  std::string stem = path.stem().string();  // "tiny_vgg.report" -> "tiny_vgg"
  const std::string suffix = ".report";
  if (stem.size() > suffix.size() && stem.ends_with(suffix))
    stem.resize(stem.size() - suffix.size());
  return stem;
}

double overall_from_report_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) raise(errc::io_failure, "cannot open report '" + path.string() + "'");
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("OVERALL,", 0) == 0) {
      std::string value = line.substr(8);
      if (!value.empty() && value.back() == '%') value.pop_back();
      try {
        return std::stod(value) / 100.0;
      } catch (...) {
        raise(errc::config_error, "report '" + path.string() + "': bad OVERALL value");
      }
    }
  }
  raise(errc::config_error, "report '" + path.string() + "' has no OVERALL row");
}

// ---- gradcheck ----------------------------------------------------------------------

struct GradcheckArgs {
  std::string architecture;
  std::string shape = "1,8,8";
  std::size_t classes = 3;
  double width_multiplier = 0.25;
  double eps = 1e-5;
  double tolerance = 1e-4;
  std::uint64_t seed = 42;
  std::size_t batch = 2;
};

double model_loss(Model& model, const Tensor& input, std::span<const std::size_t> labels,
                  double aux_weight) {
  const Tensor scores = model.forward(input);
  nn::LossResult main;
  switch (model.spec().head) {
    case Head::softmax: main = nn::softmax_cross_entropy(scores, labels); break;
    case Head::hinge_l1: main = nn::multiclass_hinge(scores, labels, nn::HingeVariant::l1); break;
    case Head::hinge_l2: main = nn::multiclass_hinge(scores, labels, nn::HingeVariant::l2); break;
  }
  double loss = main.loss;
  if (model.has_aux()) {
    nn::LossResult aux;
    switch (model.spec().head) {
      case Head::softmax: aux = nn::softmax_cross_entropy(model.aux_scores(), labels); break;
      case Head::hinge_l1:
        aux = nn::multiclass_hinge(model.aux_scores(), labels, nn::HingeVariant::l1);
        break;
      case Head::hinge_l2:
        aux = nn::multiclass_hinge(model.aux_scores(), labels, nn::HingeVariant::l2);
        break;
    }
    loss += aux_weight * aux.loss;
  }
  return loss;
}

int run_gradcheck(const GradcheckArgs& args) {
  ModelSpec spec;
  spec.architecture = architecture_from_name(args.architecture);
  if (std::sscanf(args.shape.c_str(), "%zu,%zu,%zu", &spec.input_channels, &spec.input_height,
                  &spec.input_width) != 3)
    raise(errc::config_error, "--shape must be C,H,W");
  spec.num_classes = args.classes;
  spec.width_multiplier = args.width_multiplier;
  spec.seed = args.seed;

  Model model = build_model(spec);
  SplitMix64 rng(mix_seed(args.seed, 1));
  Tensor input({args.batch, spec.input_channels, spec.input_height, spec.input_width});
  for (std::size_t i = 0; i < input.numel(); ++i) input[i] = rng.next_unit();
  std::vector<std::size_t> labels(args.batch);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % spec.num_classes;

  // Nudge all parameters off exact-zero so no relu/pool/hinge sits on a kink
  // (zero biases on dead channels put pre-activations exactly at 0, where the
  // subgradient convention and finite differences legitimately disagree).
  SplitMix64 nudge(mix_seed(args.seed, 2));
  for (ParamRef& p : model.params())
    for (std::size_t i = 0; i < p.value->numel(); ++i)
      (*p.value)[i] += nudge.next_range(-0.05, 0.05);

  const double aux_weight = 0.3;
  // analytic gradients
  model.zero_grads();
  const Tensor scores = model.forward(input);
  nn::LossResult main;
  switch (model.spec().head) {
    case Head::softmax: main = nn::softmax_cross_entropy(scores, labels); break;
    case Head::hinge_l1: main = nn::multiclass_hinge(scores, labels, nn::HingeVariant::l1); break;
    case Head::hinge_l2: main = nn::multiclass_hinge(scores, labels, nn::HingeVariant::l2); break;
  }
  if (model.has_aux()) {
    nn::LossResult aux;
    switch (model.spec().head) {
      case Head::softmax: aux = nn::softmax_cross_entropy(model.aux_scores(), labels); break;
      case Head::hinge_l1:
        aux = nn::multiclass_hinge(model.aux_scores(), labels, nn::HingeVariant::l1);
        break;
      case Head::hinge_l2:
        aux = nn::multiclass_hinge(model.aux_scores(), labels, nn::HingeVariant::l2);
        break;
    }
    for (std::size_t i = 0; i < aux.grad.numel(); ++i) aux.grad[i] *= aux_weight;
    model.backward(main.grad, aux.grad);
  } else {
    model.backward(main.grad);
  }

  std::vector<nn::ParamGrad> param_grads;
  for (ParamRef& p : model.params()) param_grads.push_back({p.value, p.grad});
  const double max_err = nn::grad_check(
      [&] { return model_loss(model, input, labels, aux_weight); }, param_grads, args.eps);

  if (max_err < args.tolerance) {
    std::cout << "PASS max_rel_err=" << max_err << " (tolerance " << args.tolerance << ", "
              << architecture_name(spec.architecture) << ")\n";
    return 0;
  }
  std::cout << "FAIL max_rel_err=" << max_err << " (tolerance " << args.tolerance << ", "
            << architecture_name(spec.architecture) << ")\n";
  return 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"malware byte-plot conversion and family classification"};
  app.require_subcommand(1);

  // convert
  ConvertArgs convert_args;
  CLI::App* convert = app.add_subcommand("convert", "render binaries as grayscale PGM images");
  convert->add_option("inputs", convert_args.inputs, "input files or directories")->required();
  convert->add_option("-o,--out", convert_args.out_dir, "output directory");
  convert->add_option("--width", convert_args.width, "image width: auto or a pixel count");
  convert->add_flag("--sections", convert_args.sections, "print the PE section table");

  // stats
  std::string stats_root;
  CLI::App* stats = app.add_subcommand("stats", "per-family sample counts as CSV");
  stats->add_option("root", stats_root, "corpus root (directory per family)")->required();

  // split
  std::string split_root, split_fractions = "0.7,0.15,0.15";
  std::string out_train = "train.tsv", out_val = "val.tsv", out_test = "test.tsv";
  std::uint64_t split_seed = 1;
  CLI::App* split = app.add_subcommand("split", "write stratified split manifests");
  split->add_option("root", split_root, "corpus root")->required();
  split->add_option("--fractions", split_fractions, "train,val,test fractions");
  split->add_option("--seed", split_seed, "split seed");
  split->add_option("--out-train", out_train, "train manifest path");
  split->add_option("--out-val", out_val, "val manifest path");
  split->add_option("--out-test", out_test, "test manifest path");

  // train
  std::string train_config_path;
  std::vector<std::string> train_sets;
  std::string train_root, train_arch, train_out;
  CLI::App* train_cmd = app.add_subcommand("train", "train one model");
  train_cmd->add_option("--config", train_config_path, "key-value config file");
  train_cmd->add_option("--set", train_sets, "override: section.key=value")->take_all();
  train_cmd->add_option("--root", train_root, "corpus root (overrides data.root)");
  train_cmd->add_option("--arch", train_arch, "architecture (overrides model.architecture)");
  train_cmd->add_option("--out", train_out, "output directory (overrides output.dir)");

  // eval
  std::string eval_snapshot, eval_manifest, eval_root, eval_out = ".", eval_id;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a snapshot on a split manifest");
  eval_cmd->add_option("--snapshot", eval_snapshot, "model snapshot")->required();
  eval_cmd->add_option("--manifest", eval_manifest, "split manifest")->required();
  eval_cmd->add_option("--root", eval_root, "corpus root the manifest paths are relative to")
      ->required();
  eval_cmd->add_option("--out", eval_out, "output directory");
  eval_cmd->add_option("--id", eval_id, "model identifier (default: architecture)");

  // compare
  std::vector<std::string> compare_files;
  std::string compare_out_csv, compare_out_md;
  CLI::App* compare = app.add_subcommand("compare", "rank evaluation reports by accuracy");
  compare->add_option("reports", compare_files, "report CSV files")->required();
  compare->add_option("--out-csv", compare_out_csv, "write the comparison CSV here");
  compare->add_option("--out-md", compare_out_md, "write the comparison markdown here");

  // gradcheck
  GradcheckArgs gc;
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference check a model");
  gradcheck->add_option("architecture", gc.architecture, "model architecture")->required();
  gradcheck->add_option("--shape", gc.shape, "input shape C,H,W");
  gradcheck->add_option("--classes", gc.classes, "number of classes");
  gradcheck->add_option("--width-multiplier", gc.width_multiplier, "channel width multiplier");
  gradcheck->add_option("--eps", gc.eps, "finite-difference step");
  gradcheck->add_option("--tolerance", gc.tolerance, "max relative error accepted");
  gradcheck->add_option("--seed", gc.seed, "input/parameter seed");

  // repro
  std::string repro_root, repro_out = "repro";
  std::vector<std::string> repro_sets, repro_archs;
  CLI::App* repro = app.add_subcommand(
      "repro", "split, train, evaluate and compare all six architectures");
  repro->add_option("--root", repro_root, "corpus root")->required();
  repro->add_option("--out", repro_out, "output directory");
  repro->add_option("--set", repro_sets, "override: section.key=value")->take_all();
  repro->add_option("--archs", repro_archs,
                    "architectures to run (default: all six)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (convert->parsed()) return run_convert(convert_args);

    if (stats->parsed()) {
      std::cout << class_stats_csv(scan_corpus(stats_root));
      return 0;
    }

    if (split->parsed()) {
      const CorpusIndex index = scan_corpus(split_root);
      const SplitSpec spec = parse_fractions(split_fractions, split_seed);
      const SplitResult result = stratified_split(index, spec);
      write_manifest(result.train, out_train);
      write_manifest(result.val, out_val);
      write_manifest(result.test, out_test);
      std::cout << "train " << result.train.total() << "\nval " << result.val.total()
                << "\ntest " << result.test.total() << "\n";
      return 0;
    }

    if (train_cmd->parsed()) {
      std::vector<std::string> overrides = train_sets;
      if (!train_root.empty()) overrides.push_back("data.root=" + train_root);
      if (!train_arch.empty()) overrides.push_back("model.architecture=" + train_arch);
      if (!train_out.empty()) overrides.push_back("output.dir=" + train_out);
      RunConfig config = resolve_run_config(train_config_path, overrides);
      if (config.data.root.empty())
        raise(errc::config_error, "data.root is required (set --root or data.root)");

      const CorpusIndex index = scan_corpus(config.data.root);
      const SplitSpec split_spec{config.data.train_fraction, config.data.val_fraction,
                                 config.data.test_fraction, config.data.split_seed};
      const SplitResult splits = stratified_split(index, split_spec);
      const fs::path out_dir = config.output_dir;
      fs::create_directories(out_dir);
      write_manifest(splits.train, out_dir / "train.tsv");
      write_manifest(splits.val, out_dir / "val.tsv");
      write_manifest(splits.test, out_dir / "test.tsv");
      const EvalReport report = train_and_eval(config, splits, out_dir);
      std::cout << "test overall " << format_percent(report.overall_accuracy()) << " macro "
                << format_percent(report.macro_average()) << "\n";
      return 0;
    }

    if (eval_cmd->parsed()) {
      Model model = load_snapshot(eval_snapshot);
      const CorpusIndex split_index = read_manifest(eval_manifest, eval_root);
      const std::string id =
          eval_id.empty() ? architecture_name(model.spec().architecture) : eval_id;
      const EvalReport report =
          evaluate(model, split_index, id, fs::path(eval_manifest).filename().string());
      fs::create_directories(eval_out);
      emit_report(report, ReportFormat::csv, fs::path(eval_out) / (id + ".report.csv"));
      emit_report(report, ReportFormat::markdown, fs::path(eval_out) / (id + ".report.md"));
      std::cout << "overall " << format_percent(report.overall_accuracy()) << " macro "
                << format_percent(report.macro_average()) << "\n";
      return 0;
    }

    if (compare->parsed()) {
      std::vector<ComparisonRow> rows;
      for (const std::string& file : compare_files)
        rows.push_back({model_id_from_report_path(file), overall_from_report_csv(file)});
      std::stable_sort(rows.begin(), rows.end(),
                       [](const ComparisonRow& a, const ComparisonRow& b) {
                         return a.accuracy < b.accuracy;
                       });
      std::cout << render_comparison(rows, ReportFormat::csv);
      if (!compare_out_csv.empty())
        emit_comparison(rows, ReportFormat::csv, compare_out_csv);
      if (!compare_out_md.empty())
        emit_comparison(rows, ReportFormat::markdown, compare_out_md);
      return 0;
    }

    if (gradcheck->parsed()) return run_gradcheck(gc);

    if (repro->parsed()) {
      std::vector<std::string> overrides = repro_sets;
      overrides.push_back("data.root=" + repro_root);
      RunConfig base = resolve_run_config("", overrides);

      const CorpusIndex index = scan_corpus(base.data.root);
      const SplitSpec split_spec{base.data.train_fraction, base.data.val_fraction,
                                 base.data.test_fraction, base.data.split_seed};
      const SplitResult splits = stratified_split(index, split_spec);
      const fs::path out_dir(repro_out);
      fs::create_directories(out_dir);
      write_manifest(splits.train, out_dir / "train.tsv");
      write_manifest(splits.val, out_dir / "val.tsv");
      write_manifest(splits.test, out_dir / "test.tsv");
      write_text_file(out_dir / "config.resolved", base.to_text());

      std::vector<std::string> archs = repro_archs;
      if (archs.empty())
        archs = {"tiny_vgg", "tiny_inception", "tiny_resnet", "cnn_svm", "gru_svm", "mlp_svm"};

      std::vector<EvalReport> reports;
      for (const std::string& arch : archs) {
        std::cout << "== " << arch << "\n";
        RunConfig config = base;
        config.model.architecture = architecture_from_name(arch);
        const bool svm_arch = config.model.architecture == Architecture::cnn_svm ||
                              config.model.architecture == Architecture::gru_svm ||
                              config.model.architecture == Architecture::mlp_svm;
        config.model.head = svm_arch ? Head::hinge_l2 : Head::softmax;
        reports.push_back(train_and_eval(config, splits, out_dir / arch));
      }
      const std::vector<ComparisonRow> rows = compare_models(reports);
      emit_comparison(rows, ReportFormat::csv, out_dir / "comparison.csv");
      emit_comparison(rows, ReportFormat::markdown, out_dir / "comparison.md");
      std::cout << render_comparison(rows, ReportFormat::csv);
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
