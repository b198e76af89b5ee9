#include "malvis/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "malvis/error.hpp"
#include "malvis/rng.hpp"

namespace malvis {

namespace {

struct HeadLoss {
  double loss;
  Tensor grad;
};

HeadLoss head_loss(Head head, const Tensor& scores, std::span<const std::size_t> labels) {
  nn::LossResult r;
  switch (head) {
    case Head::softmax: r = nn::softmax_cross_entropy(scores, labels); break;
    case Head::hinge_l1: r = nn::multiclass_hinge(scores, labels, nn::HingeVariant::l1); break;
    case Head::hinge_l2: r = nn::multiclass_hinge(scores, labels, nn::HingeVariant::l2); break;
  }
  return {r.loss, std::move(r.grad)};
}

std::size_t count_correct(const Tensor& scores, std::span<const std::size_t> labels) {
  const std::size_t n = scores.dim(0), f = scores.dim(1);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = scores.data() + i * f;
    std::size_t arg = 0;
    for (std::size_t j = 1; j < f; ++j)
      if (row[j] > row[arg]) arg = j;  // ties keep the lowest class id
    if (arg == labels[i]) ++correct;
  }
  return correct;
}

BatchOptions batch_options(const ModelSpec& spec, std::size_t batch_size, bool shuffle) {
  BatchOptions opts;
  opts.batch_size = batch_size;
  opts.shuffle = shuffle;
  opts.target_height = spec.input_height;
  opts.target_width = spec.input_width;
  opts.channels = spec.input_channels;
  return opts;
}

double accuracy_on(Model& model, BatchIterator& it) {
  it.reset();
  std::size_t correct = 0;
  while (auto batch = it.next()) {
    const Tensor scores = model.forward(batch->input);
    correct += count_correct(scores, batch->labels);
  }
  return it.size() ? static_cast<double>(correct) / static_cast<double>(it.size()) : 0.0;
}

}  // namespace

TrainHistory train(Model& model, const CorpusIndex& train_split, const CorpusIndex& val_split,
                   const TrainConfig& config, std::ostream* progress) {
  if (config.epochs < 1) raise(errc::config_error, "epochs must be >= 1");
  if (config.batch_size < 1) raise(errc::config_error, "batch_size must be >= 1");
  if (train_split.samples.empty()) raise(errc::empty_corpus, "training split is empty");
  if (val_split.samples.empty()) raise(errc::empty_corpus, "validation split is empty");

  const ModelSpec& spec = model.spec();
  BatchIterator train_it(train_split, batch_options(spec, config.batch_size, true));
  BatchIterator val_it(val_split, batch_options(spec, config.batch_size, false));

  std::vector<ParamRef> params = model.params();
  std::vector<Tensor> velocity;
  velocity.reserve(params.size());
  for (const ParamRef& p : params) velocity.emplace_back(p.value->shape());

  TrainHistory history;
  double best_val = -1.0;
  std::vector<Tensor> best_params;
  std::size_t epochs_since_best = 0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    train_it.reshuffle(mix_seed(config.seed, epoch));
    double loss_sum = 0.0;
    std::size_t correct = 0, seen = 0, batch_no = 0;

    while (auto batch = train_it.next()) {
      ++batch_no;
      const std::size_t n = batch->labels.size();
      model.zero_grads();
      const Tensor scores = model.forward(batch->input);
      HeadLoss main = head_loss(spec.head, scores, batch->labels);
      double batch_loss = main.loss;
      if (model.has_aux()) {
        HeadLoss aux = head_loss(spec.head, model.aux_scores(), batch->labels);
        batch_loss += config.aux_weight * aux.loss;
        for (std::size_t i = 0; i < aux.grad.numel(); ++i) aux.grad[i] *= config.aux_weight;
        model.backward(main.grad, aux.grad);
      } else {
        model.backward(main.grad);
      }
      if (!std::isfinite(batch_loss))
        raise(errc::diverged_loss, "loss is not finite at epoch " + std::to_string(epoch) +
                                       ", batch " + std::to_string(batch_no));
      for (std::size_t i = 0; i < params.size(); ++i)
        nn::sgd_momentum_update(*params[i].value, *params[i].grad, velocity[i],
                                config.learning_rate, config.momentum);

      loss_sum += batch_loss * static_cast<double>(n);
      correct += count_correct(scores, batch->labels);
      seen += n;
    }

    EpochStats stats;
    stats.train_loss = loss_sum / static_cast<double>(seen);
    stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    stats.val_accuracy = accuracy_on(model, val_it);
    history.push_back(stats);
    if (progress) {
      char line[128];
      std::snprintf(line, sizeof(line), "epoch %zu/%zu loss %.4f train_acc %.4f val_acc %.4f",
                    epoch, config.epochs, stats.train_loss, stats.train_accuracy,
                    stats.val_accuracy);
      (*progress) << line << std::endl;
    }

    if (stats.val_accuracy > best_val) {
      best_val = stats.val_accuracy;
      best_params.clear();
      for (const ParamRef& p : params) best_params.push_back(*p.value);
      epochs_since_best = 0;
    } else if (config.patience > 0 && ++epochs_since_best >= config.patience) {
      break;
    }
  }

  // leave the model holding the best-validation parameters
  for (std::size_t i = 0; i < params.size(); ++i) *params[i].value = best_params[i];
  return history;
}

std::size_t EvalReport::total() const {
  std::size_t n = 0;
  for (const auto& row : confusion)
    for (std::size_t cell : row) n += cell;
  return n;
}

double EvalReport::overall_accuracy() const {
  const std::size_t n = total();
  if (n == 0) return 0.0;
  std::size_t diag = 0;
  for (std::size_t f = 0; f < confusion.size(); ++f) diag += confusion[f][f];
  return static_cast<double>(diag) / static_cast<double>(n);
}

std::vector<double> EvalReport::per_family_accuracy() const {
  std::vector<double> acc(confusion.size(), 0.0);
  for (std::size_t f = 0; f < confusion.size(); ++f) {
    std::size_t row_sum = 0;
    for (std::size_t cell : confusion[f]) row_sum += cell;
    if (row_sum > 0) acc[f] = static_cast<double>(confusion[f][f]) / static_cast<double>(row_sum);
  }
  return acc;
}

double EvalReport::macro_average() const {
  const std::vector<double> acc = per_family_accuracy();
  if (acc.empty()) return 0.0;
  double sum = 0.0;
  for (double a : acc) sum += a;
  return sum / static_cast<double>(acc.size());
}

EvalReport evaluate(Model& model, const CorpusIndex& split, const std::string& model_id,
                    const std::string& split_id, std::size_t batch_size) {
  if (split.samples.empty()) raise(errc::empty_corpus, "evaluation split is empty");
  if (split.families.size() != model.spec().num_classes)
    raise(errc::shape_mismatch, "split has " + std::to_string(split.families.size()) +
                                    " families, model expects " +
                                    std::to_string(model.spec().num_classes));

  EvalReport report;
  report.model_id = model_id;
  report.split_id = split_id;
  report.families = split.families;
  report.confusion.assign(split.families.size(),
                          std::vector<std::size_t>(split.families.size(), 0));

  BatchIterator it(split, batch_options(model.spec(), batch_size, false));
  while (auto batch = it.next()) {
    const Tensor scores = model.forward(batch->input);
    const std::size_t n = scores.dim(0), f = scores.dim(1);
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = scores.data() + i * f;
      std::size_t arg = 0;
      for (std::size_t j = 1; j < f; ++j)
        if (row[j] > row[arg]) arg = j;
      report.confusion[batch->labels[i]][arg] += 1;
    }
  }
  return report;
}

std::vector<ComparisonRow> compare_models(const std::vector<EvalReport>& reports) {
  std::vector<ComparisonRow> rows;
  rows.reserve(reports.size());
  for (const EvalReport& r : reports) rows.push_back({r.model_id, r.overall_accuracy()});
  std::stable_sort(rows.begin(), rows.end(),
                   [](const ComparisonRow& a, const ComparisonRow& b) {
                     return a.accuracy < b.accuracy;
                   });
  return rows;
}

std::string format_percent(double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f%%", value * 100.0);
  return buf;
}

std::string render_report(const EvalReport& report, ReportFormat format) {
  const std::vector<double> per_family = report.per_family_accuracy();
  std::ostringstream out;
  if (format == ReportFormat::csv) {
    out << "family,accuracy\n";
    for (std::size_t f = 0; f < report.families.size(); ++f)
      out << report.families[f] << "," << format_percent(per_family[f]) << "\n";
    out << "OVERALL," << format_percent(report.overall_accuracy()) << "\n";
  } else {
    out << "| Family | Accuracy |\n|---|---|\n";
    for (std::size_t f = 0; f < report.families.size(); ++f)
      out << "| " << report.families[f] << " | " << format_percent(per_family[f]) << " |\n";
    out << "| OVERALL | " << format_percent(report.overall_accuracy()) << " |\n";
  }
  return out.str();
}

std::string render_comparison(std::span<const ComparisonRow> rows, ReportFormat format) {
  std::ostringstream out;
  if (format == ReportFormat::csv) {
    out << "model,accuracy\n";
    for (const ComparisonRow& row : rows)
      out << row.model_id << "," << format_percent(row.accuracy) << "\n";
  } else {
    out << "| Model | Accuracy |\n|---|---|\n";
    for (const ComparisonRow& row : rows)
      out << "| " << row.model_id << " | " << format_percent(row.accuracy) << " |\n";
  }
  return out.str();
}

std::string render_history_csv(const TrainHistory& history) {
  std::ostringstream out;
  out << "epoch,train_loss,train_acc,val_acc\n";
  for (std::size_t e = 0; e < history.size(); ++e) {
    char line[128];
    std::snprintf(line, sizeof(line), "%zu,%.6f,%.6f,%.6f\n", e + 1, history[e].train_loss,
                  history[e].train_accuracy, history[e].val_accuracy);
    out << line;
  }
  return out.str();
}

namespace {
std::size_t write_text(const std::string& text, const std::filesystem::path& destination) {
  if (destination.empty()) raise(errc::io_failure, "empty destination path");
  std::ofstream out(destination, std::ios::binary);
  if (!out) raise(errc::io_failure, "cannot open '" + destination.string() + "' for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) raise(errc::io_failure, "failed writing '" + destination.string() + "'");
  return text.size();
}
}  // namespace

std::size_t emit_report(const EvalReport& report, ReportFormat format,
                        const std::filesystem::path& destination) {
  return write_text(render_report(report, format), destination);
}

std::size_t emit_comparison(std::span<const ComparisonRow> rows, ReportFormat format,
                            const std::filesystem::path& destination) {
  return write_text(render_comparison(rows, format), destination);
}

}  // namespace malvis
