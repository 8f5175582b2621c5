#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "hmil/bundle.hpp"
#include "hmil/error.hpp"
#include "hmil/training.hpp"

namespace py = pybind11;
using namespace hmil;

namespace {

// Documents cross the boundary as JSON text; the Python wrapper serializes.
std::vector<Json> parse_documents(const std::string& text) {
  Json j = Json::parse(text);
  if (!j.is_array()) throw Error(ErrorKind::kInvalidArgument, "documents must be a JSON array");
  return j.get<std::vector<Json>>();
}

Bundle bundle_from(const py::bytes& data) {
  const std::string_view view(data);
  return load_bundle({reinterpret_cast<const std::uint8_t*>(view.data()), view.size()});
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Hierarchical multiple-instance learning over JSON documents.";

  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::kIo) {
        PyErr_SetString(PyExc_OSError, e.what());
      } else {
        PyErr_SetString(PyExc_ValueError, e.what());
      }
    } catch (const Json::exception& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    }
  });

  m.def(
      "schema_of",
      [](const std::string& documents, std::size_t max_distinct, std::size_t max_depth,
         std::size_t threads) {
        const SchemaConfig config{max_distinct, max_depth};
        const auto docs = parse_documents(documents);
        py::gil_scoped_release release;
        return schema_to_json(schema_of(docs, config, threads), config).dump();
      },
      py::arg("documents"), py::arg("max_distinct") = 1000, py::arg("max_depth") = 64,
      py::arg("threads") = 1);

  m.def(
      "render_report",
      [](const std::string& schema) {
        SchemaConfig config;
        const SchemaNode s = schema_from_json(Json::parse(schema), &config);
        return render_report(s, config);
      },
      py::arg("schema"));

  m.def(
      "suggest_extractor",
      [](const std::string& schema, double min_presence, std::size_t category_threshold,
         double numeric_ratio, double majority_ratio, std::size_t ngram_n,
         std::size_t ngram_dim) {
        SuggestConfig config;
        config.min_presence = min_presence;
        config.category_threshold = category_threshold;
        config.numeric_ratio = numeric_ratio;
        config.majority_ratio = majority_ratio;
        config.ngram.n = ngram_n;
        config.ngram.hash_dim = ngram_dim;
        return extractor_to_json(suggest_extractor(schema_from_json(Json::parse(schema)), config))
            .dump();
      },
      py::arg("schema"), py::arg("min_presence") = 0.01, py::arg("category_threshold") = 100,
      py::arg("numeric_ratio") = 0.95, py::arg("majority_ratio") = 0.9, py::arg("ngram_n") = 3,
      py::arg("ngram_dim") = 2053);

  m.def(
      "describe_batch",
      [](const std::string& extractor, const std::string& documents) {
        const DataNode data =
            extract_batch(extractor_from_json(Json::parse(extractor)), parse_documents(documents));
        return py::make_tuple(sample_count(data), describe_shape(data));
      },
      py::arg("extractor"), py::arg("documents"),
      "Returns (sample count, shape description) of the extracted batch.");

  m.def(
      "train",
      [](const std::string& documents, const std::vector<std::string>& labels,
         const std::string& extractor, std::size_t epochs, std::size_t batch_size, double lr,
         std::uint64_t seed, double validation_fraction, std::size_t patience,
         std::size_t embed_dim, std::size_t threads) {
        const auto docs = parse_documents(documents);
        if (docs.size() != labels.size()) {
          throw Error(ErrorKind::kInvalidArgument, "documents and labels differ in length");
        }
        LabeledCorpus corpus;
        for (std::size_t i = 0; i < docs.size(); ++i) corpus.add(docs[i], labels[i]);
        TrainConfig config;
        config.epochs = epochs;
        config.batch_size = batch_size;
        config.optimizer.lr = lr;
        config.seed = seed;
        config.validation_fraction = validation_fraction;
        config.patience = patience;
        config.model.embed_dim = embed_dim;
        config.threads = threads;
        const Extractor e = extractor_from_json(Json::parse(extractor));
        std::vector<std::uint8_t> bytes;
        std::string report;
        {
          py::gil_scoped_release release;
          auto [bundle, r] = train(corpus, e, config);
          bytes = save_bundle(bundle);
          report = r.to_json().dump();
        }
        return py::make_tuple(py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size()),
                              report);
      },
      py::arg("documents"), py::arg("labels"), py::arg("extractor"), py::arg("epochs") = 100,
      py::arg("batch_size") = 64, py::arg("lr") = 1e-3, py::arg("seed") = 0,
      py::arg("validation_fraction") = 0.2, py::arg("patience") = 10, py::arg("embed_dim") = 32,
      py::arg("threads") = 1,
      "Returns (bundle bytes, report JSON).");

  m.def(
      "classes", [](const py::bytes& bundle) { return bundle_from(bundle).classes; },
      py::arg("bundle"));

  m.def(
      "predict_proba",
      [](const py::bytes& bundle, const std::string& documents) {
        const Matrix<double> p = predict_proba(bundle_from(bundle), parse_documents(documents));
        return Matrix<double>(p.transpose());
      },
      py::arg("bundle"), py::arg("documents"), "Probabilities, documents × classes.");

  m.def(
      "evaluate",
      [](const py::bytes& bundle, const std::string& documents,
         const std::vector<std::string>& labels) {
        const EvalResult r = evaluate(bundle_from(bundle), parse_documents(documents), labels);
        return Json{{"accuracy", r.accuracy},
                    {"precision", r.precision},
                    {"recall", r.recall},
                    {"confusion", r.confusion},
                    {"count", r.count}}
            .dump();
      },
      py::arg("bundle"), py::arg("documents"), py::arg("labels"));
}
