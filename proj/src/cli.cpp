#include "spdnn/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "spdnn/errors.hpp"
#include "spdnn/graph.hpp"
#include "spdnn/merge.hpp"
#include "spdnn/metrics.hpp"
#include "spdnn/network.hpp"
#include "spdnn/synth_data.hpp"
#include "spdnn/train.hpp"

namespace spdnn::cli {

namespace {

namespace fs = std::filesystem;

struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Write-then-rename so readers never observe a partial file.
void write_atomic(const std::string& path, const std::string& bytes) {
  const fs::path target(path);
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out.flush()) throw InputError("cannot write '" + tmp.string() + "'");
  }
  fs::rename(tmp, target);
}

std::string format(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

MergedNetworkSpec load_network(const std::string& path) {
  try {
    return parse_any_network(read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(e.line(), e.token(), path + ": " + e.what());
  }
}

SegmentationSet load_dataset(const std::string& path) {
  std::istringstream in(read_file(path));
  return load_set(in);
}

// ---- merge -------------------------------------------------------------------

struct MergeArgs {
  std::vector<std::string> inputs;
  std::string output;
  std::string name = "spdnn";
  double tolerance = 0.10;
  std::int64_t target_params = 0;
  int merge_kernel = 1;
};

int cmd_merge(const MergeArgs& a, std::ostream& out, std::ostream& err) {
  std::vector<NetworkSpec> parents;
  std::vector<std::int64_t> counts;
  for (const auto& path : a.inputs) {
    try {
      parents.push_back(parse_network(read_file(path)));
    } catch (const ParseError& e) {
      throw ParseError(e.line(), e.token(), path + ": " + e.what());
    }
    counts.push_back(count_params(parents.back()));
    out << "parent " << parents.back().name() << ": " << counts.back() << " params\n";
  }
  MergeOptions opts;
  opts.parity_tolerance = a.tolerance;
  opts.target_params = a.target_params;
  opts.output_merge_kernel = a.merge_kernel;
  if (const auto warning = parity_warning(counts); !warning.empty()) err << "warning: " << warning << "\n";

  MergedNetworkSpec merged = spdnn_merge(parents, opts);
  merged.name = a.name;
  const std::int64_t total = count_params(merged);
  double target = static_cast<double>(a.target_params);
  if (target == 0) {
    for (auto c : counts) target += static_cast<double>(c);
    target /= static_cast<double>(counts.size());
  }
  out << "merged " << merged.name << ": " << total << " params, " << merged.nodes.size()
      << " nodes, parity " << format("%+.2f", 100.0 * (static_cast<double>(total) - target) / target)
      << "% vs target " << format("%.1f", target) << "\n";
  write_atomic(a.output, serialize_merged(merged));
  return kOk;
}

// ---- params ------------------------------------------------------------------

int cmd_params(const std::vector<std::string>& inputs, bool detail, std::ostream& out) {
  for (const auto& path : inputs) {
    const auto spec = load_network(path);
    out << spec.name << ": " << count_params(spec) << " params\n";
    if (!detail) continue;
    const auto store = ParameterStore<float>::initialize(spec, 0);
    for (const auto& p : store.params())
      out << "  " << p.node << " " << p.role << " " << p.value.rows() << "x" << p.value.cols()
          << "\n";
  }
  return kOk;
}

// ---- gen-data ----------------------------------------------------------------

struct GenArgs {
  std::uint64_t seed = 42;
  int count = 1000;
  int size = 32;
  std::string output;
};

int cmd_gen_data(const GenArgs& a, std::ostream& out) {
  const auto set = generate(a.seed, a.count, a.size);
  std::ostringstream bytes;
  save_set(bytes, set);
  write_atomic(a.output, bytes.str());
  const auto split = make_split(set.size());
  out << "wrote " << set.size() << " samples of " << a.size << "x" << a.size << " (split "
      << split.train.size() << "/" << split.val.size() << "/" << split.test.size() << ")\n";
  return kOk;
}

// ---- train -------------------------------------------------------------------

struct TrainArgs {
  std::string network, dataset, checkpoint, loss_csv;
  std::string precision = "f32";
  TrainConfig cfg;
};

template <typename Scalar>
int train_as(const TrainArgs& a, const MergedNetworkSpec& spec, const SegmentationSet& data,
             std::ostream& out) {
  const auto split = make_split(data.size());
  auto result = train<Scalar>(spec, data, split, a.cfg, [&](const EpochRecord& r) {
    out << "epoch " << r.epoch << " train_loss " << format("%.9g", r.train_loss) << " val_loss "
        << format("%.9g", r.val_loss) << "\n"
        << std::flush;
  });
  std::ostringstream ckpt;
  save_checkpoint(ckpt, result.store);
  write_atomic(a.checkpoint, ckpt.str());
  if (!a.loss_csv.empty()) write_atomic(a.loss_csv, loss_csv(result.history));
  return kOk;
}

int cmd_train(TrainArgs a, std::ostream& out) {
  a.cfg.precision = parse_precision(a.precision);
  a.cfg.validate();
  const auto spec = load_network(a.network);
  const auto data = load_dataset(a.dataset);
  const auto split = make_split(data.size());
  out << "network=" << spec.name << "\nparams=" << count_params(spec) << "\ndataset=" << a.dataset
      << "\nsamples=" << data.size() << "\nsplit=" << split.train.size() << "/"
      << split.val.size() << "/" << split.test.size() << "\n"
      << a.cfg.describe();
  return a.cfg.precision == Precision::F32 ? train_as<float>(a, spec, data, out)
                                           : train_as<double>(a, spec, data, out);
}

// ---- eval --------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, network, dataset, output, per_image, histogram;
  std::string split = "test";
  double threshold = 0.5;
  bool pooled = false;
};

template <typename Scalar>
std::vector<std::vector<float>> predict_from(std::istream& ckpt, const MergedNetworkSpec& spec,
                                             const SegmentationSet& data,
                                             const std::vector<std::size_t>& idx) {
  const auto store = load_checkpoint<Scalar>(ckpt, spec);
  return predict(spec, store, data, idx, 16);
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  if (!(a.threshold >= 0 && a.threshold <= 1)) throw InputError("--threshold must lie in [0, 1]");
  const auto spec = load_network(a.network);
  const auto data = load_dataset(a.dataset);
  const auto split = make_split(data.size());
  const auto& idx = a.split == "train" ? split.train : a.split == "val" ? split.val : split.test;
  if (idx.empty()) throw InputError("the " + a.split + " split is empty");

  std::istringstream ckpt(read_file(a.checkpoint));
  const int width = checkpoint_scalar_width(ckpt);
  ckpt.seekg(0);
  const auto maps = width == 4 ? predict_from<float>(ckpt, spec, data, idx)
                               : predict_from<double>(ckpt, spec, data, idx);

  std::vector<MetricReport> per_image;
  ConfusionCounts pooled;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto c = confusion_from_masks(maps[i].data(), data.mask(idx[i]), data.pixels(),
                                        a.threshold);
    pooled += c;
    per_image.push_back(compute_metrics(c));
  }
  const auto report = a.pooled ? aggregate_report({compute_metrics(pooled)})
                               : aggregate_report(per_image);
  write_atomic(a.output, metrics_csv(report));
  if (!a.per_image.empty()) write_atomic(a.per_image, per_image_csv(per_image));
  if (!a.histogram.empty()) write_atomic(a.histogram, histogram_csv(report));

  out << "evaluated " << idx.size() << " " << a.split << " images at threshold "
      << format("%.9g", a.threshold) << (a.pooled ? " (pooled)" : "") << "\n";
  for (std::size_t k = 0; k < kMetricCount; ++k)
    out << "  " << metric_name(all_metrics()[k]) << " " << format("%.6f", report.mean[k]) << "\n";
  return kOk;
}

// ---- graph-dump --------------------------------------------------------------

int cmd_graph_dump(const std::vector<std::string>& inputs, const std::string& output,
                   std::ostream& out) {
  std::vector<ArchGraph> graphs;
  for (const auto& path : inputs) {
    try {
      graphs.push_back(network_to_graph(parse_network(read_file(path))));
    } catch (const ParseError& e) {
      throw ParseError(e.line(), e.token(), path + ": " + e.what());
    }
  }
  const ArchGraph composed = parallel_compose(graphs);
  const std::string text =
      "# before\n" + dump_graph(composed) + "# after\n" + dump_graph(contract(composed));
  if (output.empty())
    out << text;
  else
    write_atomic(output, text);
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Merge feed-forward networks by graph contraction, then train and evaluate them.",
               "spdnn"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand all help");

  MergeArgs merge;
  auto* m = app.add_subcommand("merge", "Merge architecture files into one network");
  m->add_option("inputs", merge.inputs, "Architecture files")->required()->check(CLI::ExistingFile);
  m->add_option("-o,--output", merge.output, "Merged network file")->required();
  m->add_option("--tolerance", merge.tolerance, "Allowed parameter-parity deviation")
      ->capture_default_str();
  m->add_option("--target-params", merge.target_params, "Parameter target (0 = parent mean)")
      ->capture_default_str();
  m->add_option("--merge-kernel", merge.merge_kernel, "Output-merge convolution kernel")
      ->capture_default_str();
  m->add_option("--name", merge.name, "Name of the merged network")->capture_default_str();

  std::vector<std::string> params_inputs;
  bool params_detail = false;
  auto* p = app.add_subcommand("params", "Print parameter counts");
  p->add_option("inputs", params_inputs, "Network files")->required()->check(CLI::ExistingFile);
  p->add_flag("--detail", params_detail, "List every parameter tensor");

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate the synthetic segmentation set");
  g->add_option("--seed", gen.seed, "Random seed")->capture_default_str();
  g->add_option("--count", gen.count, "Number of samples")->capture_default_str();
  g->add_option("--size", gen.size, "Image side length")->capture_default_str();
  g->add_option("-o,--output", gen.output, "Dataset file")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a network on a dataset");
  t->add_option("network", tr.network, "Network file")->required()->check(CLI::ExistingFile);
  t->add_option("dataset", tr.dataset, "Dataset file")->required()->check(CLI::ExistingFile);
  t->add_option("--epochs", tr.cfg.epochs, "Epochs")->capture_default_str();
  t->add_option("--lr", tr.cfg.learning_rate, "Learning rate")->capture_default_str();
  t->add_option("--momentum", tr.cfg.momentum, "Nesterov momentum")->capture_default_str();
  t->add_option("--batch", tr.cfg.batch_size, "Batch size")->capture_default_str();
  t->add_option("--seed", tr.cfg.seed, "Random seed")->capture_default_str();
  t->add_option("--precision", tr.precision, "f32 or f64")
      ->check(CLI::IsMember({"f32", "f64"}))
      ->capture_default_str();
  t->add_option("--loss-csv", tr.loss_csv, "Per-epoch loss CSV");
  t->add_option("-o,--output", tr.checkpoint, "Checkpoint file")->required();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  e->add_option("checkpoint", ev.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  e->add_option("network", ev.network, "Network file")->required()->check(CLI::ExistingFile);
  e->add_option("dataset", ev.dataset, "Dataset file")->required()->check(CLI::ExistingFile);
  e->add_option("--threshold", ev.threshold, "Binarization threshold")->capture_default_str();
  e->add_option("--split", ev.split, "train, val or test")
      ->check(CLI::IsMember({"train", "val", "test"}))
      ->capture_default_str();
  e->add_flag("--pooled", ev.pooled, "Metrics from pixel counts pooled over all images");
  e->add_option("--per-image", ev.per_image, "Per-image metrics CSV");
  e->add_option("--histogram", ev.histogram, "Per-metric 20-bin histogram CSV");
  e->add_option("-o,--output", ev.output, "Metrics CSV")->required();

  std::vector<std::string> dump_inputs;
  std::string dump_output;
  auto* d = app.add_subcommand("graph-dump", "Print the parallel graph before and after contraction");
  d->add_option("inputs", dump_inputs, "Architecture files")->required()->check(CLI::ExistingFile);
  d->add_option("-o,--output", dump_output, "Write the dump to a file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << "\n" << "run 'spdnn --help' for usage\n";
    return kInputError;
  }

  try {
    if (*m) return cmd_merge(merge, out, err);
    if (*p) return cmd_params(params_inputs, params_detail, out);
    if (*g) return cmd_gen_data(gen, out);
    if (*t) return cmd_train(tr, out);
    if (*e) return cmd_eval(ev, out);
    return cmd_graph_dump(dump_inputs, dump_output, out);
  } catch (const InfeasibleParity& ex) {
    err << "error: " << ex.what() << "\n";
    return kInfeasible;
  } catch (const MismatchError& ex) {
    err << "error: " << ex.what() << "\n";
    return kMismatch;
  } catch (const NumericError& ex) {
    err << "error: " << ex.what() << "\n";
    return kNumericError;
  } catch (const std::exception& ex) {
    // Parse, spec, shape and format errors, unreadable or unwritable files.
    err << "error: " << ex.what() << "\n";
    return kInputError;
  }
}

}  // namespace spdnn::cli
