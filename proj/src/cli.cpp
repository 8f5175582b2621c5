#include "hmil/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>

#include "hmil/bundle.hpp"
#include "hmil/error.hpp"
#include "hmil/extractor.hpp"
#include "hmil/jsonl.hpp"
#include "hmil/schema.hpp"
#include "hmil/training.hpp"

namespace hmil {

namespace {

struct Settings {
  SchemaConfig schema;
  SuggestConfig suggest;
  TrainConfig train;
};

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw Error(ErrorKind::kInvalidArgument, "override " + key + ": '" + text +
                                                 "' is not a valid number");
  }
  return value;
}

std::size_t parse_positive(const std::string& key, const std::string& text) {
  const auto v = parse_number<std::size_t>(key, text);
  if (v == 0) throw Error(ErrorKind::kInvalidArgument, "override " + key + " must be > 0");
  return v;
}

double parse_fraction(const std::string& key, const std::string& text) {
  const auto v = parse_number<double>(key, text);
  if (!(v >= 0.0 && v <= 1.0)) {
    throw Error(ErrorKind::kInvalidArgument, "override " + key + " must lie in [0, 1]");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw Error(ErrorKind::kInvalidArgument, "override " + key + ": expected true or false");
}

void apply_override(Settings& s, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw Error(ErrorKind::kInvalidArgument, "override '" + assignment + "' is not key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string v = assignment.substr(eq + 1);
  using Setter = std::function<void()>;
  const std::map<std::string, Setter> table{
      {"schema.max-distinct", [&] { s.schema.max_distinct = parse_positive(key, v); }},
      {"schema.max-depth",
       [&] { s.schema.max_depth = s.suggest.max_depth = parse_positive(key, v); }},
      {"extract.min-presence", [&] { s.suggest.min_presence = parse_fraction(key, v); }},
      {"extract.category-threshold",
       [&] { s.suggest.category_threshold = parse_number<std::size_t>(key, v); }},
      {"extract.numeric-ratio", [&] { s.suggest.numeric_ratio = parse_fraction(key, v); }},
      {"extract.majority-ratio", [&] { s.suggest.majority_ratio = parse_fraction(key, v); }},
      {"extract.ngram.n", [&] { s.suggest.ngram.n = parse_positive(key, v); }},
      {"extract.ngram.hash-dim", [&] { s.suggest.ngram.hash_dim = parse_positive(key, v); }},
      {"extract.ngram.normalize", [&] { s.suggest.ngram.normalize = parse_bool(key, v); }},
      {"model.embed-dim", [&] { s.train.model.embed_dim = parse_positive(key, v); }},
      {"model.activation", [&] { s.train.model.activation = activation_from_string(v); }},
      {"model.aggregation", [&] { s.train.model.aggregation = aggregation_from_string(v); }},
      {"model.layers-per-node",
       [&] { s.train.model.layers_per_node = parse_positive(key, v); }},
      {"train.epochs", [&] { s.train.epochs = parse_number<std::size_t>(key, v); }},
      {"train.batch-size", [&] { s.train.batch_size = parse_positive(key, v); }},
      {"train.optimizer",
       [&] {
         if (v == "adam") {
           s.train.optimizer.kind = OptimizerKind::kAdam;
         } else if (v == "sgd") {
           s.train.optimizer.kind = OptimizerKind::kSgd;
         } else {
           throw Error(ErrorKind::kInvalidArgument, "unknown optimizer '" + v + "'");
         }
       }},
      {"train.lr", [&] { s.train.optimizer.lr = parse_number<double>(key, v); }},
      {"train.beta1", [&] { s.train.optimizer.beta1 = parse_number<double>(key, v); }},
      {"train.beta2", [&] { s.train.optimizer.beta2 = parse_number<double>(key, v); }},
      {"train.eps", [&] { s.train.optimizer.eps = parse_number<double>(key, v); }},
      {"train.shuffle", [&] { s.train.shuffle = parse_bool(key, v); }},
      {"train.validation-fraction",
       [&] {
         s.train.validation_fraction = parse_number<double>(key, v);
         if (!(s.train.validation_fraction >= 0.0 && s.train.validation_fraction < 1.0)) {
           throw Error(ErrorKind::kInvalidArgument, "override " + key + " must lie in [0, 1)");
         }
       }},
      {"train.patience", [&] { s.train.patience = parse_positive(key, v); }},
  };
  const auto it = table.find(key);
  if (it == table.end()) {
    throw Error(ErrorKind::kInvalidArgument, "unknown override key '" + key + "'");
  }
  it->second();
}

Settings make_settings(const std::vector<std::string>& overrides) {
  Settings s;
  for (const auto& o : overrides) apply_override(s, o);
  return s;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open '" + path + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

Json read_json_file(const std::string& path) {
  const std::string text = read_text(path);
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorKind::kParse, path + ": " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw Error(ErrorKind::kIo, "failed writing '" + path + "'");
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string shape_name(const SchemaNode& node) {
  if (const auto* leaf = std::get_if<LeafSchema>(&node.node)) {
    static constexpr const char* kNames[] = {"null", "bool", "integer", "real", "string"};
    std::string kinds;
    for (std::size_t k = 0; k < kValueKindCount; ++k) {
      if (leaf->kinds[k] == 0) continue;
      if (!kinds.empty()) kinds += '|';
      kinds += kNames[k];
    }
    return kinds.empty() ? "leaf" : kinds;
  }
  if (std::holds_alternative<ListSchema>(node.node)) return "list";
  if (std::holds_alternative<DictSchema>(node.node)) return "dict";
  if (std::holds_alternative<PolymorphicSchema>(node.node)) return "polymorphic";
  return "empty";
}

void print_key_table(const SchemaNode& schema, std::ostream& out) {
  const DictSchema* dict = std::get_if<DictSchema>(&schema.node);
  if (const auto* poly = std::get_if<PolymorphicSchema>(&schema.node); poly && poly->dict) {
    dict = std::get_if<DictSchema>(&(*poly->dict)->node);
  }
  if (!dict) {
    out << "root: " << shape_name(schema) << '\n';
    return;
  }
  std::size_t width = 3;
  for (const auto& [key, _] : dict->entries) width = std::max(width, key.size());
  out << std::left << std::setw(static_cast<int>(width)) << "key" << "  presence  type\n";
  for (const auto& [key, entry] : dict->entries) {
    const double pct = dict->total ? 100.0 * static_cast<double>(entry.presence) /
                                         static_cast<double>(dict->total)
                                   : 0.0;
    std::ostringstream p;
    p << std::fixed << std::setprecision(1) << pct << '%';
    out << std::left << std::setw(static_cast<int>(width)) << key << "  " << std::right
        << std::setw(8) << p.str() << "  " << shape_name(*entry.child) << '\n';
  }
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("HMIL_SEED"); env && *env) {
    return parse_number<std::uint64_t>("HMIL_SEED", env);
  }
  return 0;
}

void ensure_nonempty(const LabeledCorpus& corpus, const std::string& path) {
  if (corpus.documents.empty()) {
    throw Error(ErrorKind::kEmptyBatch, "'" + path + "' contains no labeled samples");
  }
}

int exit_code(ErrorKind kind) { return kind == ErrorKind::kIo ? 1 : 2; }

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hierarchical multiple-instance learning over raw JSON documents", "hmil"};
  app.require_subcommand(1);
  int verbosity = 0;
  app.add_flag("-v,--verbose", verbosity, "Print progress (repeat for more)");

  std::vector<std::string> overrides;
  std::size_t threads = 1;
  auto add_overrides = [&](CLI::App* sub) {
    sub->add_option("--set", overrides,
                    "Config override key=value (schema.*, extract.*, model.*, train.*)")
        ->type_name("KEY=VALUE");
  };

  // schema
  std::string schema_in, schema_out;
  auto* schema_cmd = app.add_subcommand("schema", "Infer a schema from JSONL or a .json directory");
  schema_cmd->add_option("input", schema_in, "JSONL file or directory of .json files")->required();
  schema_cmd->add_option("-o,--out", schema_out, "Output schema path")->required();
  schema_cmd->add_option("--threads", threads, "Worker threads for sharded inference")
      ->check(CLI::PositiveNumber);
  add_overrides(schema_cmd);

  // report
  std::string report_in, report_out;
  auto* report_cmd = app.add_subcommand("report", "Render a schema as a standalone HTML report");
  report_cmd->add_option("schema", report_in, "Schema file")->required();
  report_cmd->add_option("-o,--out", report_out, "Output HTML path")->required();

  // suggest
  std::string suggest_in, suggest_out;
  auto* suggest_cmd = app.add_subcommand("suggest", "Suggest an extractor for a schema");
  suggest_cmd->add_option("schema", suggest_in, "Schema file")->required();
  suggest_cmd->add_option("-o,--out", suggest_out, "Output extractor path")->required();
  add_overrides(suggest_cmd);

  // train
  std::string train_in, train_out, train_extractor, report_csv, report_json, label_field;
  bool auto_extractor = false;
  std::optional<std::uint64_t> seed_flag;
  auto* train_cmd = app.add_subcommand("train", "Train a classifier on labeled JSONL");
  train_cmd->add_option("input", train_in, "Labeled JSONL file")->required();
  train_cmd->add_option("-o,--out", train_out, "Output bundle path")->required();
  auto* ex_opt = train_cmd->add_option("--extractor", train_extractor, "Extractor file");
  auto* auto_opt =
      train_cmd->add_flag("--auto", auto_extractor, "Infer schema and extractor from the input");
  ex_opt->excludes(auto_opt);
  train_cmd->add_option("--seed", seed_flag, "Random seed (default: $HMIL_SEED, else 0)");
  train_cmd->add_option("--label-field", label_field, "Take labels from this sample member");
  train_cmd->add_option("--report-csv", report_csv, "Per-epoch CSV (default: <out>.report.csv)");
  train_cmd->add_option("--report-json", report_json, "Training report as JSON");
  train_cmd->add_option("--threads", threads, "Worker threads for extraction")
      ->check(CLI::PositiveNumber);
  add_overrides(train_cmd);

  // predict
  std::string predict_bundle, predict_in, predict_out;
  auto* predict_cmd = app.add_subcommand("predict", "Write per-class probabilities as CSV");
  predict_cmd->add_option("bundle", predict_bundle, "Model bundle")->required();
  predict_cmd->add_option("input", predict_in, "JSONL of raw samples")->required();
  predict_cmd->add_option("-o,--out", predict_out, "Output CSV path")->required();

  // eval
  std::string eval_bundle, eval_in, eval_label_field;
  auto* eval_cmd = app.add_subcommand("eval", "Report accuracy and confusion on labeled JSONL");
  eval_cmd->add_option("bundle", eval_bundle, "Model bundle")->required();
  eval_cmd->add_option("input", eval_in, "Labeled JSONL file")->required();
  eval_cmd->add_option("--label-field", eval_label_field, "Take labels from this sample member");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (schema_cmd->parsed()) {
      const Settings s = make_settings(overrides);
      SchemaNode schema;
      std::uint64_t count = 0;
      if (threads <= 1) {
        for_each_document(schema_in, [&](Json&& doc) {
          update_schema(schema, doc, s.schema);
          ++count;
        });
      } else {
        const auto docs = read_documents(schema_in);
        count = docs.size();
        schema = schema_of(docs, s.schema, threads);
      }
      write_text(schema_out, schema_to_json(schema, s.schema).dump(2) + "\n");
      if (count == 0) err << "warning: no documents in '" << schema_in << "'\n";
      out << "documents: " << count << '\n';
      if (count > 0) print_key_table(schema, out);
      return 0;
    }
    if (report_cmd->parsed()) {
      SchemaConfig config;
      const SchemaNode schema = schema_from_json(read_json_file(report_in), &config);
      write_text(report_out, render_report(schema, config));
      return 0;
    }
    if (suggest_cmd->parsed()) {
      const Settings s = make_settings(overrides);
      const SchemaNode schema = schema_from_json(read_json_file(suggest_in));
      write_text(suggest_out, extractor_to_json(suggest_extractor(schema, s.suggest)).dump(2) + "\n");
      return 0;
    }
    if (train_cmd->parsed()) {
      if (!auto_extractor && train_extractor.empty()) {
        throw Error(ErrorKind::kInvalidArgument, "train needs --extractor PATH or --auto");
      }
      Settings s = make_settings(overrides);
      s.train.seed = resolve_seed(seed_flag);
      s.train.threads = threads;
      const LabeledCorpus corpus = read_labeled(train_in, label_field);
      ensure_nonempty(corpus, train_in);
      Extractor extractor;
      if (auto_extractor) {
        const SchemaNode schema = schema_of(corpus.documents, s.schema, threads);
        extractor = suggest_extractor(schema, s.suggest);
      } else {
        extractor = extractor_from_json(read_json_file(train_extractor));
      }
      auto [bundle, report] = train(corpus, extractor, s.train);
      if (verbosity > 0) {
        for (const auto& e : report.epochs) {
          err << "epoch " << e.epoch << " train_loss " << e.train_loss << " val_acc "
              << e.val_accuracy << '\n';
        }
      }
      save_bundle_file(bundle, train_out);
      write_text(report_csv.empty() ? train_out + ".report.csv" : report_csv, report.to_csv());
      if (!report_json.empty()) write_text(report_json, report.to_json().dump(2) + "\n");
      const auto& best = report.epochs.at(report.best_epoch - 1);
      out << "trained " << report.epochs.size() << " epochs on " << report.train_size
          << " samples; best epoch " << report.best_epoch << " val_acc " << best.val_accuracy
          << '\n';
      return 0;
    }
    if (predict_cmd->parsed()) {
      const Bundle bundle = load_bundle_file(predict_bundle);
      const auto docs = read_documents(predict_in);
      const Matrix<double> proba = predict_proba(bundle, docs);
      std::ostringstream csv;
      for (std::size_t c = 0; c < bundle.classes.size(); ++c) {
        csv << (c ? "," : "") << csv_field(bundle.classes[c]);
      }
      csv << '\n' << std::setprecision(9);
      for (Eigen::Index j = 0; j < proba.cols(); ++j) {
        for (Eigen::Index c = 0; c < proba.rows(); ++c) csv << (c ? "," : "") << proba(c, j);
        csv << '\n';
      }
      write_text(predict_out, csv.str());
      return 0;
    }
    if (eval_cmd->parsed()) {
      const Bundle bundle = load_bundle_file(eval_bundle);
      const LabeledCorpus corpus = read_labeled(eval_in, eval_label_field);
      ensure_nonempty(corpus, eval_in);
      const EvalResult r = evaluate(bundle, corpus.documents, corpus.labels);
      out << "samples: " << r.count << '\n';
      out << "accuracy: " << std::fixed << std::setprecision(4) << r.accuracy << '\n';
      out << "class,precision,recall\n";
      for (std::size_t c = 0; c < bundle.classes.size(); ++c) {
        out << csv_field(bundle.classes[c]) << ',' << r.precision[c] << ',' << r.recall[c] << '\n';
      }
      out << "confusion (rows: true, columns: predicted)\n";
      for (std::size_t c = 0; c < bundle.classes.size(); ++c) {
        out << csv_field(bundle.classes[c]);
        for (std::size_t p = 0; p < bundle.classes.size(); ++p) out << ',' << r.confusion[c][p];
        out << '\n';
      }
      out.unsetf(std::ios::floatfield);
      return 0;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const Json::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace hmil
