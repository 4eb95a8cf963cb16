#include "cnet/cli.hpp"

#include "cnet/anomaly.hpp"
#include "cnet/datasets.hpp"
#include "cnet/error.hpp"
#include "cnet/eval.hpp"
#include "cnet/network.hpp"
#include "cnet/parallel.hpp"
#include "cnet/training.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

namespace cnet {

namespace fs = std::filesystem;

namespace {

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  s = s.substr(first, last - first + 1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

// Flat "key = value" lines become "--key value" arguments; '#' starts a comment.
std::vector<std::string> read_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::vector<std::string> args;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": empty key");
    args.push_back("--" + key);
    args.push_back(trim(line.substr(eq + 1)));
  }
  return args;
}

// Splices "--config FILE" contents in front of the remaining overrides.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  if (args.size() < 2) return args;
  std::vector<std::string> from_file;
  std::vector<std::string> rest;
  for (std::size_t i = 2; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw ConfigError("--config needs a file name");
      const auto file_args = read_config_file(args[++i]);
      from_file.insert(from_file.end(), file_args.begin(), file_args.end());
    } else if (args[i].starts_with("--config=")) {
      const auto file_args = read_config_file(args[i].substr(9));
      from_file.insert(from_file.end(), file_args.begin(), file_args.end());
    } else {
      rest.push_back(args[i]);
    }
  }
  std::vector<std::string> out{args[0], args[1]};
  out.insert(out.end(), from_file.begin(), from_file.end());
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

template <typename T>
std::vector<T> parse_list(const std::string& text, const char* what) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    std::istringstream is(item);
    T value{};
    if (!(is >> value) || !is.eof()) {
      throw ConfigError(std::string("bad value '") + item + "' in " + what);
    }
    out.push_back(value);
  }
  if (out.empty()) throw ConfigError(std::string("empty list for ") + what);
  return out;
}

std::vector<std::string> parse_names(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void require_positive(long long value, const char* key) {
  if (value < 1) throw ConfigError(std::string(key) + " must be positive");
}

void dump_effective_config(const CLI::App& cmd, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  for (const CLI::Option* opt : cmd.get_options()) {
    const std::string name = opt->get_single_name();
    if (name == "help" || name == "dump_config" || name == "config") continue;
    std::string value;
    if (opt->count() > 0) {
      value = opt->results().back();
    } else {
      value = opt->get_default_str();
    }
    if (value.empty()) continue;
    out << name << '=' << value << '\n';
  }
}

struct Common {
  std::uint64_t seed = 0;
  int threads = 0;
  bool deterministic = false;
  std::string dump_config;

  void add(CLI::App* cmd) {
    cmd->add_option("--seed", seed, "Master seed for every random stream");
    cmd->add_option("--threads", threads, "Worker thread cap (0 = all cores)");
    cmd->add_option("--deterministic", deterministic, "Sorted accumulation for bitwise reproducibility");
    cmd->add_option("--dump_config", dump_config, "Write the effective configuration here");
  }
  void apply() const {
    if (threads < 0) throw ConfigError("threads must be non-negative");
    set_thread_limit(static_cast<std::size_t>(threads));
  }
};

struct ModelOptions {
  std::string layer = "conv_composite";
  std::optional<int> j0;
  std::optional<int> m;
  std::optional<int> k;
  double sigma = 0.3;

  void add(CLI::App* cmd, bool j0_required) {
    cmd->add_option("--layer", layer, "conv_composite | aggr_composite | baseline");
    auto* opt = cmd->add_option("--J0", j0, "Output features of the first stage");
    if (j0_required) opt->required();
    cmd->add_option("--M", m, "RBF centers per spatial function");
    cmd->add_option("--K", k, "Spatial function output size");
    cmd->add_option("--sigma", sigma, "Shared RBF width");
  }
};

struct TrainingOptions {
  int epochs = 200;
  int batch_size = 16;
  double lr = 1e-3;
  bool bn_recalibrate = true;

  void add(CLI::App* cmd) {
    cmd->add_option("--bn_recalibrate", bn_recalibrate,
                    "Re-estimate batch-norm running statistics at the final weights");
    cmd->add_option("--epochs", epochs);
    cmd->add_option("--batch_size", batch_size);
    cmd->add_option("--lr", lr, "Adam learning rate");
  }
  TrainConfig make(const Common& common) const {
    require_positive(batch_size, "batch_size");
    if (epochs < 0) throw ConfigError("epochs must be non-negative");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    TrainConfig tc;
    tc.epochs = epochs;
    tc.batch_size = batch_size;
    tc.adam.lr = lr;
    tc.seed = substream(common.seed, "training");
    tc.accumulation.sorted_accumulation = common.deterministic;
    tc.recalibrate_batch_norm = bn_recalibrate;
    return tc;
  }
};

// ---------------------------------------------------------------------------

struct TrainCommand {
  Common common;
  ModelOptions model;
  TrainingOptions training;
  std::string data;
  std::string synthetic = "sphere,cube,cylinder";
  int train_count = 200;
  int test_count = 100;
  int points = 1024;
  double jitter = 0.01;
  double train_fraction = 0.8;
  bool normalize_input = true;
  std::string checkpoint = "model.cpnt";
  std::string log = "train_log.csv";
  std::string predictions;

  void add(CLI::App* cmd) {
    common.add(cmd);
    model.add(cmd, true);
    training.add(cmd);
    cmd->add_option("--data", data, "Dataset root: <root>/<class>/<instance>.xyz");
    cmd->add_option("--synthetic", synthetic, "Shape classes used when no data root is given");
    cmd->add_option("--train_count", train_count, "Synthetic training instances over all classes");
    cmd->add_option("--test_count", test_count, "Synthetic test instances over all classes");
    cmd->add_option("--points", points);
    cmd->add_option("--jitter", jitter);
    cmd->add_option("--train_fraction", train_fraction);
    cmd->add_option("--normalize", normalize_input, "Center loaded clouds and scale them into the unit sphere");
    cmd->add_option("--checkpoint", checkpoint);
    cmd->add_option("--log", log);
    cmd->add_option("--predictions", predictions, "Optional CSV of test predictions");
  }

  int run(std::ostream& out) {
    common.apply();
    const LayerKind kind = parse_layer_kind(model.layer);
    require_positive(*model.j0, "J0");
    const int m = model.m.value_or(64);
    const int k = model.k.value_or(16);
    require_positive(m, "M");
    require_positive(k, "K");
    require_positive(points, "points");
    TrainConfig tc = training.make(common);

    LabeledDataset train_set, test_set;
    if (!data.empty()) {
      LoadOptions lo;
      lo.points = points;
      lo.seed = common.seed;
      lo.normalize = normalize_input;
      std::tie(train_set, test_set) = split(load_directory(data, lo), train_fraction, common.seed);
    } else {
      std::vector<ShapeKind> shapes;
      for (const auto& s : parse_names(synthetic)) shapes.push_back(parse_shape_kind(s));
      if (shapes.size() < 2) throw ConfigError("synthetic recipe needs at least two classes");
      require_positive(train_count, "train_count");
      if (test_count < 0) throw ConfigError("test_count must be non-negative");
      train_set = synthetic_dataset(shapes, train_count, points, jitter,
                                    substream(common.seed, "train-data"), "train_");
      if (test_count > 0) {
        test_set = synthetic_dataset(shapes, test_count, points, jitter,
                                     substream(common.seed, "test-data"), "test_");
      }
    }

    NetworkSpec spec = classification_spec(kind, *model.j0, m, k,
                                           static_cast<int>(train_set.class_names.size()));
    spec.sigma = model.sigma;
    Network net(spec, substream(common.seed, "init"));
    out << "training " << to_string(kind) << " network, " << count_parameters(net)
        << " parameters, " << train_set.size() << " instances\n";
    tc.on_epoch = [&](const EpochRecord& r) {
      out << "epoch " << r.epoch << " loss " << std::setprecision(6) << r.loss << " accuracy "
          << r.accuracy << '\n';
    };
    const TrainResult result = train(net, train_set.clouds(), train_set.labels(), tc);
    save_checkpoint(net, checkpoint);
    write_epoch_log(log, result.log);

    if (test_set.size() > 0) {
      std::vector<int> preds(test_set.size());
      const std::uint64_t eval_seed = substream(common.seed, "evaluation");
      parallel_for(test_set.size(), [&](std::size_t i) {
        Eigen::Index arg = 0;
        net.predict(test_set.instances[i].cloud, eval_seed, tc.accumulation).maxCoeff(&arg);
        preds[i] = static_cast<int>(arg);
      });
      const auto labels = test_set.labels();
      out << std::fixed << std::setprecision(3) << "test OA " << overall_accuracy(preds, labels)
          << " AA " << average_accuracy(preds, labels) << '\n';
      if (!predictions.empty()) {
        std::ofstream p(predictions);
        if (!p) throw ConfigError("cannot write " + predictions);
        p << "instance_id,pred,label\n";
        for (std::size_t i = 0; i < preds.size(); ++i) {
          p << test_set.instances[i].id << ',' << preds[i] << ',' << labels[i] << '\n';
        }
      }
    }
    return kExitOk;
  }
};

// ---------------------------------------------------------------------------

std::vector<PointCloud> load_flat_or_class(const fs::path& root, const std::string& normal_class,
                                           const LoadOptions& lo) {
  bool has_files = false;
  for (const auto& e : fs::directory_iterator(root)) has_files |= e.is_regular_file();
  if (!has_files) {
    const LabeledDataset ds = load_directory(root, lo);
    std::vector<PointCloud> out;
    for (const auto& inst : ds.instances) {
      if (ds.class_names[static_cast<std::size_t>(inst.label)] == normal_class) out.push_back(inst.cloud);
    }
    if (out.empty()) throw ConfigError("no instances of class '" + normal_class + "' in " + root.string());
    return out;
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  Rng rng(substream(lo.seed, "data"));
  std::vector<PointCloud> out;
  for (const auto& f : files) {
    PointCloud c = resample(read_point_cloud(f), lo.points, rng);
    out.push_back(lo.normalize ? normalize(c) : c);
  }
  return out;
}

struct DetectCommand {
  Common common;
  ModelOptions model;
  TrainingOptions training;
  std::string detector = "self_supervised";
  std::string train_dir;
  std::string test_dir;
  std::string normal_class;
  std::string normal_shape = "sphere";
  std::string anomaly_shape = "cube";
  int train_count = 200;
  int test_normal = 50;
  int test_anomalous = 50;
  int points = 1024;
  double jitter = 0.01;
  std::string angles = "0,45,90,135,210,240,300,330";
  bool normalize_input = true;
  int latent_dim = 32;
  double noise_sigma = 0.01;
  int good_bins = 5;
  int ifor_trees = 100;
  int ifor_subsample = 256;
  std::string scores = "scores.csv";
  std::string results_out;
  std::string method_name;

  void add(CLI::App* cmd) {
    common.add(cmd);
    model.layer = "aggr_composite";
    model.add(cmd, false);
    training.add(cmd);
    cmd->add_option("--detector", detector, "self_supervised | dsvdd | good_ifor");
    cmd->add_option("--train_dir", train_dir, "Normal training clouds (flat, or a class root)");
    cmd->add_option("--test_dir", test_dir, "Test root with one subdirectory per class");
    cmd->add_option("--normal_class", normal_class, "Class directory holding normal instances");
    cmd->add_option("--normal_shape", normal_shape, "Synthetic normal class");
    cmd->add_option("--anomaly_shape", anomaly_shape, "Synthetic anomalous class");
    cmd->add_option("--train_count", train_count);
    cmd->add_option("--test_normal", test_normal);
    cmd->add_option("--test_anomalous", test_anomalous);
    cmd->add_option("--points", points);
    cmd->add_option("--jitter", jitter);
    cmd->add_option("--normalize", normalize_input, "Center loaded clouds and scale them into the unit sphere");
    cmd->add_option("--angles", angles, "Rotation angles in degrees, first must be 0");
    cmd->add_option("--latent_dim", latent_dim);
    cmd->add_option("--noise_sigma", noise_sigma);
    cmd->add_option("--good_bins", good_bins);
    cmd->add_option("--ifor_trees", ifor_trees);
    cmd->add_option("--ifor_subsample", ifor_subsample);
    cmd->add_option("--scores", scores, "Output CSV: instance_id,score,label");
    cmd->add_option("--results_out", results_out, "Append class,method,auc rows here");
    cmd->add_option("--method_name", method_name);
  }

  int run(std::ostream& out) {
    common.apply();
    DetectConfig dc = DetectConfig::defaults_for(parse_detector_kind(detector));
    dc.layer = parse_layer_kind(model.layer);
    if (model.j0) dc.j0 = *model.j0;
    if (model.m) dc.num_centers = *model.m;
    if (model.k) dc.spatial_size = *model.k;
    require_positive(dc.j0, "J0");
    require_positive(dc.num_centers, "M");
    require_positive(dc.spatial_size, "K");
    require_positive(latent_dim, "latent_dim");
    require_positive(points, "points");
    dc.sigma = model.sigma;
    dc.latent_dim = latent_dim;
    dc.transformations.angles_deg = parse_list<double>(angles, "angles");
    dc.train = training.make(common);
    dc.train.noise_sigma = noise_sigma;
    dc.train.loss = dc.detector == DetectorKind::dsvdd ? LossKind::dsvdd : LossKind::cross_entropy;
    dc.seed = common.seed;
    dc.good_bins = good_bins;
    dc.ifor.trees = ifor_trees;
    dc.ifor.subsample = ifor_subsample;
    require_positive(good_bins, "good_bins");
    require_positive(ifor_trees, "ifor_trees");
    require_positive(ifor_subsample, "ifor_subsample");
    dc.transformations.validate();

    std::vector<PointCloud> normals;
    std::vector<PointCloud> test_clouds;
    std::vector<int> test_labels;
    std::vector<std::string> test_ids;
    std::string class_label;
    if (!train_dir.empty() || !test_dir.empty()) {
      if (train_dir.empty() || test_dir.empty() || normal_class.empty()) {
        throw ConfigError("train_dir, test_dir and normal_class must be given together");
      }
      LoadOptions lo;
      lo.points = points;
      lo.seed = common.seed;
      lo.normalize = normalize_input;
      normals = load_flat_or_class(train_dir, normal_class, lo);
      const LabeledDataset test = load_directory(test_dir, lo);
      for (const auto& inst : test.instances) {
        test_clouds.push_back(inst.cloud);
        test_labels.push_back(test.class_names[static_cast<std::size_t>(inst.label)] == normal_class ? 0 : 1);
        test_ids.push_back(inst.id);
      }
      class_label = normal_class;
    } else {
      require_positive(train_count, "train_count");
      if (test_normal < 0 || test_anomalous < 0) throw ConfigError("test counts must be non-negative");
      const ShapeKind normal = parse_shape_kind(normal_shape);
      const ShapeKind anomaly = parse_shape_kind(anomaly_shape);
      const auto train_set = synthetic_dataset({normal}, train_count, points, jitter,
                                               substream(common.seed, "train-data"), "train_");
      normals = train_set.clouds();
      const auto test_n = synthetic_dataset({normal}, test_normal, points, jitter,
                                            substream(common.seed, "test-normal"), "test_");
      const auto test_a = synthetic_dataset({anomaly}, test_anomalous, points, jitter,
                                            substream(common.seed, "test-anomalous"), "test_");
      for (const auto& inst : test_n.instances) {
        test_clouds.push_back(inst.cloud);
        test_labels.push_back(0);
        test_ids.push_back(inst.id);
      }
      for (const auto& inst : test_a.instances) {
        test_clouds.push_back(inst.cloud);
        test_labels.push_back(1);
        test_ids.push_back(inst.id);
      }
      class_label = normal_shape;
    }

    std::vector<TestItem> items;
    for (std::size_t i = 0; i < test_clouds.size(); ++i) {
      items.push_back({&test_clouds[i], test_labels[i], test_ids[i]});
    }
    dc.train.on_epoch = [&](const EpochRecord& r) {
      out << "epoch " << r.epoch << " loss " << std::setprecision(6) << r.loss << '\n';
    };
    out << "detector " << to_string(dc.detector) << ", " << normals.size() << " normal training instances, "
        << items.size() << " test instances\n";
    const ScoredDataset scored = detect(normals, items, dc);
    write_scores_csv(scores, scored);
    const double auc = roc_auc(scored.scores, scored.labels);
    out << "AUC " << std::fixed << std::setprecision(3) << auc << '\n';
    if (!results_out.empty()) {
      const bool fresh = !fs::exists(results_out);
      std::ofstream r(results_out, std::ios::app);
      if (!r) throw ConfigError("cannot write " + results_out);
      if (fresh) r << "class,method,value\n";
      r << class_label << ',' << (method_name.empty() ? detector : method_name) << ','
        << std::setprecision(6) << auc << '\n';
    }
    return kExitOk;
  }
};

// ---------------------------------------------------------------------------

struct ParamCountCommand {
  Common common;
  int j0 = 64;
  int k = 16;
  int num_classes = 40;
  std::string m_list = "8,16,32,64,128,256";
  std::string kinds = "conv_composite,aggr_composite,baseline";
  std::string out_path;

  void add(CLI::App* cmd) {
    common.add(cmd);
    cmd->add_option("--J0", j0);
    cmd->add_option("--K", k);
    cmd->add_option("--num_classes", num_classes);
    cmd->add_option("--M_list", m_list);
    cmd->add_option("--kinds", kinds);
    cmd->add_option("--out", out_path, "Also write the CSV here");
  }

  int run(std::ostream& out) {
    common.apply();
    require_positive(j0, "J0");
    require_positive(k, "K");
    require_positive(num_classes, "num_classes");
    const auto ms = parse_list<int>(m_list, "M_list");
    std::ostringstream csv;
    csv << "kind,M,parameters,growth_vs_first\n";
    for (const auto& name : parse_names(kinds)) {
      const LayerKind kind = parse_layer_kind(name);
      std::size_t first = 0;
      for (int m : ms) {
        require_positive(m, "M");
        const std::size_t count = count_parameters(classification_spec(kind, j0, m, k, num_classes));
        if (first == 0) first = count;
        csv << to_string(kind) << ',' << m << ',' << count << ',' << std::setprecision(6)
            << static_cast<double>(count) / static_cast<double>(first) - 1.0 << '\n';
      }
    }
    out << csv.str();
    if (!out_path.empty()) {
      std::ofstream f(out_path);
      if (!f) throw ConfigError("cannot write " + out_path);
      f << csv.str();
    }
    return kExitOk;
  }
};

// ---------------------------------------------------------------------------

std::vector<std::vector<std::string>> read_csv_rows(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
    rows.push_back(std::move(cells));
  }
  return rows;
}

struct EvalCommand {
  Common common;
  std::string predictions;
  std::string results;
  std::string scores;
  std::string out_path;

  void add(CLI::App* cmd) {
    common.add(cmd);
    cmd->add_option("--predictions", predictions, "CSV instance_id,pred,label");
    cmd->add_option("--results", results, "CSV class,method,value (AUC per normal class)");
    cmd->add_option("--scores", scores, "CSV instance_id,score,label");
    cmd->add_option("--out", out_path, "Write the results table as CSV here");
  }

  int run(std::ostream& out) {
    common.apply();
    if (predictions.empty() && results.empty() && scores.empty()) {
      throw ConfigError("eval needs predictions, results or scores");
    }
    out << std::fixed << std::setprecision(3);
    if (!predictions.empty()) {
      std::vector<int> preds, labels;
      const auto rows = read_csv_rows(predictions);
      for (std::size_t r = 1; r < rows.size(); ++r) {
        if (rows[r].size() != 3) throw ConfigError("predictions rows need 3 columns");
        preds.push_back(std::stoi(rows[r][1]));
        labels.push_back(std::stoi(rows[r][2]));
      }
      out << "OA " << overall_accuracy(preds, labels) << '\n';
      out << "AA " << average_accuracy(preds, labels) << '\n';
    }
    if (!scores.empty()) {
      const ScoredDataset s = read_scores_csv(scores);
      out << "AUC " << roc_auc(s.scores, s.labels) << '\n';
    }
    if (!results.empty()) {
      const auto rows = read_csv_rows(results);
      ResultsTable table;
      std::map<std::string, std::map<std::string, double>> by_method;
      for (std::size_t r = 1; r < rows.size(); ++r) {
        if (rows[r].size() != 3) throw ConfigError("results rows need 3 columns");
        if (std::find(table.classes.begin(), table.classes.end(), rows[r][0]) == table.classes.end()) {
          table.classes.push_back(rows[r][0]);
        }
        if (!by_method.contains(rows[r][1])) table.methods.push_back({rows[r][1], {}});
        by_method[rows[r][1]][rows[r][0]] = std::stod(rows[r][2]);
      }
      for (auto& m : table.methods) {
        for (const auto& c : table.classes) {
          const auto it = by_method[m.name].find(c);
          if (it == by_method[m.name].end()) {
            throw ConfigError("method " + m.name + " has no value for class " + c);
          }
          m.values.push_back(it->second);
        }
      }
      out << format_results_table(table);
      if (!out_path.empty()) {
        std::ofstream f(out_path);
        if (!f) throw ConfigError("cannot write " + out_path);
        f << results_table_csv(table);
      }
    }
    return kExitOk;
  }
};

// ---------------------------------------------------------------------------

struct BenchCommand {
  Common common;
  std::string kinds = "conv_composite,aggr_composite,baseline";
  std::string m_list = "8,256";
  int j0 = 8;
  int k = 8;
  int points = 1024;
  int batch = 4;
  int repeats = 3;
  std::string out_path = "bench.csv";

  void add(CLI::App* cmd) {
    common.add(cmd);
    cmd->add_option("--kinds", kinds);
    cmd->add_option("--M_list", m_list);
    cmd->add_option("--J0", j0);
    cmd->add_option("--K", k);
    cmd->add_option("--points", points);
    cmd->add_option("--batch", batch, "Clouds per timed training step");
    cmd->add_option("--repeats", repeats);
    cmd->add_option("--out", out_path);
  }

  int run(std::ostream& out) {
    common.apply();
    require_positive(j0, "J0");
    require_positive(k, "K");
    require_positive(points, "points");
    require_positive(repeats, "repeats");
    if (batch < 2) throw ConfigError("batch must be at least 2");
    std::vector<PointCloud> clouds;
    for (int b = 0; b < batch; ++b) {
      clouds.push_back(generate_shape(ShapeKind::sphere, points, 0.01,
                                      derive_seed(substream(common.seed, "data"), static_cast<std::uint64_t>(b))));
    }
    using clock = std::chrono::steady_clock;
    std::ostringstream csv;
    csv << "kind,M,mode,mean_ms_per_cloud,std_ms_per_cloud\n";
    auto report = [&](LayerKind kind, int m, const char* mode, const std::vector<double>& ms) {
      double mean = 0.0;
      for (double v : ms) mean += v;
      mean /= static_cast<double>(ms.size());
      double var = 0.0;
      for (double v : ms) var += (v - mean) * (v - mean);
      const double sd = ms.size() > 1 ? std::sqrt(var / static_cast<double>(ms.size() - 1)) : 0.0;
      csv << to_string(kind) << ',' << m << ',' << mode << ',' << std::fixed << std::setprecision(3)
          << mean << ',' << sd << '\n';
    };
    for (const auto& name : parse_names(kinds)) {
      const LayerKind kind = parse_layer_kind(name);
      for (int m : parse_list<int>(m_list, "M_list")) {
        require_positive(m, "M");
        Network net(classification_spec(kind, j0, m, k, 8), substream(common.seed, "init"));
        std::vector<double> fwd, train_step;
        for (int r = 0; r < repeats; ++r) {
          ForwardConfig fc;
          fc.sampling_seed = static_cast<std::uint64_t>(r);
          auto t0 = clock::now();
          for (const auto& c : clouds) net.forward(std::span(&c, 1), fc);
          auto t1 = clock::now();
          fwd.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count() / batch);

          fc.training = true;
          NetworkCache cache;
          t0 = clock::now();
          const Matrix logits = net.forward(clouds, fc, &cache);
          std::vector<int> labels(clouds.size(), 0);
          const LossResult loss = cross_entropy_loss(logits, labels);
          Gradients grads = net.zero_gradients();
          net.backward(cache, loss.grad, grads);
          t1 = clock::now();
          train_step.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count() / batch);
        }
        report(kind, m, "forward", fwd);
        report(kind, m, "forward_backward", train_step);
      }
    }
    out << csv.str();
    std::ofstream f(out_path);
    if (!f) throw ConfigError("cannot write " + out_path);
    f << csv.str();
    return kExitOk;
  }
};

}  // namespace

int run_cli(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app("Composite-layer point cloud networks: training, anomaly detection, evaluation",
               "cnet");
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)->always_capture_default();
  app.require_subcommand(1);

  TrainCommand train_cmd;
  DetectCommand detect_cmd;
  ParamCountCommand paramcount_cmd;
  EvalCommand eval_cmd;
  BenchCommand bench_cmd;
  auto* train_app = app.add_subcommand("train", "Train a classification network");
  auto* detect_app = app.add_subcommand("detect", "Train an anomaly detector and score a test set");
  auto* paramcount_app = app.add_subcommand("paramcount", "Parameter counts across an M sweep");
  auto* eval_app = app.add_subcommand("eval", "Figures of merit from prediction/score/result files");
  auto* bench_app = app.add_subcommand("bench", "Per-cloud timing of forward and backward passes");
  train_cmd.add(train_app);
  detect_cmd.add(detect_app);
  paramcount_cmd.add(paramcount_app);
  eval_cmd.add(eval_app);
  bench_cmd.add(bench_app);
  for (auto* sub : {train_app, detect_app, paramcount_app, eval_app, bench_app}) {
    sub->add_option("--config", "key=value configuration file (expanded before parsing)");
  }

  try {
    std::vector<std::string> args = expand_config(raw_args);
    std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
    app.parse(std::move(reversed));
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    auto dump = [](const CLI::App* cmd, const Common& c) {
      if (!c.dump_config.empty()) dump_effective_config(*cmd, c.dump_config);
    };
    if (train_app->parsed()) {
      dump(train_app, train_cmd.common);
      return train_cmd.run(out);
    }
    if (detect_app->parsed()) {
      dump(detect_app, detect_cmd.common);
      return detect_cmd.run(out);
    }
    if (paramcount_app->parsed()) {
      dump(paramcount_app, paramcount_cmd.common);
      return paramcount_cmd.run(out);
    }
    if (eval_app->parsed()) {
      dump(eval_app, eval_cmd.common);
      return eval_cmd.run(out);
    }
    if (bench_app->parsed()) {
      dump(bench_app, bench_cmd.common);
      return bench_cmd.run(out);
    }
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DivergenceError& e) {
    err << "training diverged: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const UndefinedMetricError& e) {
    err << e.what() << '\n';
    return kExitAucUndefined;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace cnet
