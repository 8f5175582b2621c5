#include "hmil/bundle.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "hmil/error.hpp"
#include "overloaded.hpp"

namespace hmil {

namespace {

using detail::Overloaded;

constexpr char kMagic[] = "HMIL1";
constexpr std::size_t kMagicSize = 5;

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > in_.size() - at_) {
      throw Error(ErrorKind::kCorruptContainer, "unexpected end of bundle");
    }
    auto out = in_.subspan(at_, n);
    at_ += n;
    return out;
  }
  std::uint64_t u64() {
    auto b = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  float f32() {
    auto b = take(4);
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return std::bit_cast<float>(bits);
  }
  std::size_t remaining() const { return in_.size() - at_; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t at_ = 0;
};

constexpr const char* kLeafKindNames[] = {"dense", "onehot", "ngram"};

Json chain_to_json(const DenseChain& chain) {
  Json out = Json::array();
  for (const DenseLayer& l : chain) {
    out.push_back(Json{{"weights", l.weights},
                       {"bias", l.bias},
                       {"in", l.in_dim},
                       {"out", l.out_dim},
                       {"activation", to_string(l.activation)}});
  }
  return out;
}

DenseChain chain_from_json(const Json& j) {
  DenseChain chain;
  for (const Json& l : j) {
    DenseLayer layer;
    layer.weights = l.at("weights").get<std::size_t>();
    layer.bias = l.at("bias").get<std::size_t>();
    layer.in_dim = l.at("in").get<std::size_t>();
    layer.out_dim = l.at("out").get<std::size_t>();
    layer.activation = activation_from_string(l.at("activation").get<std::string>());
    chain.push_back(layer);
  }
  if (chain.empty()) throw Error(ErrorKind::kCorruptContainer, "empty dense chain");
  return chain;
}

Json config_to_json(const ModelConfig& c) {
  return Json{{"embed_dim", c.embed_dim},
              {"activation", to_string(c.activation)},
              {"aggregation", to_string(c.aggregation)},
              {"layers_per_node", c.layers_per_node},
              {"seed", c.seed}};
}

ModelConfig config_from_json(const Json& j) {
  ModelConfig c;
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.activation = activation_from_string(j.at("activation").get<std::string>());
  c.aggregation = aggregation_from_string(j.at("aggregation").get<std::string>());
  c.layers_per_node = j.at("layers_per_node").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

void check_chain(const DenseChain& chain, const ParamStore<float>& params) {
  for (const DenseLayer& l : chain) {
    if (l.weights >= params.size() || l.bias >= params.size() ||
        params[l.weights].rows() != static_cast<Eigen::Index>(l.out_dim) ||
        params[l.weights].cols() != static_cast<Eigen::Index>(l.in_dim) ||
        params[l.bias].rows() != static_cast<Eigen::Index>(l.out_dim) ||
        params[l.bias].cols() != 1) {
      throw Error(ErrorKind::kCorruptContainer, "layer does not match stored parameters");
    }
  }
  for (std::size_t i = 1; i < chain.size(); ++i) {
    if (chain[i].in_dim != chain[i - 1].out_dim) {
      throw Error(ErrorKind::kCorruptContainer, "layer dimensions do not compose");
    }
  }
}

void check_model(const ModelNode& node, const ParamStore<float>& params) {
  std::visit(Overloaded{
                 [&](const ArrayModel& m) {
                   check_chain(m.layers, params);
                   if (m.layers.front().in_dim != m.input_dim || m.imputation >= params.size() ||
                       params[m.imputation].rows() != static_cast<Eigen::Index>(m.input_dim)) {
                     throw Error(ErrorKind::kCorruptContainer, "array model is inconsistent");
                   }
                 },
                 [&](const BagModel& m) {
                   check_model(*m.child, params);
                   check_chain(m.post, params);
                   if (m.empty_bag >= params.size() ||
                       params[m.empty_bag].rows() !=
                           static_cast<Eigen::Index>(m.post.front().in_dim)) {
                     throw Error(ErrorKind::kCorruptContainer, "bag model is inconsistent");
                   }
                 },
                 [&](const ProductModel& m) {
                   std::size_t width = 0;
                   for (const auto& c : m.children) {
                     check_model(c, params);
                     width += c.embed_dim();
                   }
                   check_chain(m.combiner, params);
                   if (m.combiner.front().in_dim != width) {
                     throw Error(ErrorKind::kCorruptContainer, "product model is inconsistent");
                   }
                 },
             },
             node.node);
}

}  // namespace

Json model_to_json(const ModelNode& model) {
  return std::visit(
      Overloaded{
          [](const ArrayModel& m) {
            return Json{{"type", "array"},
                        {"kind", kLeafKindNames[static_cast<int>(m.kind)]},
                        {"input_dim", m.input_dim},
                        {"imputation", m.imputation},
                        {"layers", chain_to_json(m.layers)}};
          },
          [](const BagModel& m) {
            return Json{{"type", "bag"},
                        {"aggregation", to_string(m.aggregation)},
                        {"empty", m.empty_bag},
                        {"post", chain_to_json(m.post)},
                        {"child", model_to_json(*m.child)}};
          },
          [](const ProductModel& m) {
            Json children = Json::array();
            for (std::size_t k = 0; k < m.keys.size(); ++k) {
              children.push_back(Json{{"key", m.keys[k]}, {"model", model_to_json(m.children[k])}});
            }
            return Json{{"type", "product"},
                        {"children", children},
                        {"combiner", chain_to_json(m.combiner)}};
          },
      },
      model.node);
}

ModelNode model_from_json(const Json& j) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "array") {
    ArrayModel m;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "dense") {
      m.kind = LeafKind::kDense;
    } else if (kind == "onehot") {
      m.kind = LeafKind::kOneHot;
    } else if (kind == "ngram") {
      m.kind = LeafKind::kNGram;
    } else {
      throw Error(ErrorKind::kCorruptContainer, "unknown leaf kind '" + kind + "'");
    }
    m.input_dim = j.at("input_dim").get<std::size_t>();
    m.imputation = j.at("imputation").get<std::size_t>();
    m.layers = chain_from_json(j.at("layers"));
    return {std::move(m)};
  }
  if (type == "bag") {
    BagModel m;
    m.aggregation = aggregation_from_string(j.at("aggregation").get<std::string>());
    m.empty_bag = j.at("empty").get<std::size_t>();
    m.post = chain_from_json(j.at("post"));
    m.child = model_from_json(j.at("child"));
    return {std::move(m)};
  }
  if (type == "product") {
    ProductModel m;
    for (const Json& c : j.at("children")) {
      m.keys.push_back(c.at("key").get<std::string>());
      m.children.push_back(model_from_json(c.at("model")));
    }
    m.combiner = chain_from_json(j.at("combiner"));
    return {std::move(m)};
  }
  throw Error(ErrorKind::kCorruptContainer, "unknown model node type '" + type + "'");
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::uint8_t> save_bundle(const Bundle& bundle) {
  const auto& params = bundle.classifier.params;
  Json shapes = Json::array();
  for (std::size_t i = 0; i < params.size(); ++i) {
    shapes.push_back(Json{{"name", params.name(i)},
                          {"rows", params[i].rows()},
                          {"cols", params[i].cols()}});
  }
  const Json header{{"extractor", extractor_to_json(bundle.extractor)},
                    {"model", model_to_json(bundle.classifier.root)},
                    {"head", chain_to_json(bundle.classifier.head.layers)},
                    {"classes", bundle.classes},
                    {"model_config", config_to_json(bundle.model_config)},
                    {"params", shapes}};
  const std::string text = header.dump();

  Writer payload;
  payload.u64(text.size());
  payload.bytes(text.data(), text.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = params[i];
    for (Eigen::Index k = 0; k < t.size(); ++k) payload.f32(t.data()[k]);
  }

  Writer out;
  out.bytes(kMagic, kMagicSize);
  out.u64(payload.buffer().size());
  out.bytes(payload.buffer().data(), payload.buffer().size());
  out.u64(fnv1a64(payload.buffer()));
  return std::move(out.buffer());
}

Bundle load_bundle(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kMagicSize || std::memcmp(bytes.data(), "HMIL", 4) != 0) {
    throw Error(ErrorKind::kCorruptContainer, "not an HMIL bundle");
  }
  if (std::memcmp(bytes.data(), kMagic, kMagicSize) != 0) {
    throw Error(ErrorKind::kVersionMismatch,
                "unsupported bundle version '" +
                    std::string(reinterpret_cast<const char*>(bytes.data()), kMagicSize) +
                    "', expected HMIL1");
  }
  Reader outer(bytes.subspan(kMagicSize));
  const std::uint64_t length = outer.u64();
  if (length > outer.remaining()) throw Error(ErrorKind::kCorruptContainer, "truncated bundle");
  const auto payload = outer.take(length);
  const std::uint64_t checksum = outer.u64();
  if (outer.remaining() != 0) throw Error(ErrorKind::kCorruptContainer, "trailing bytes");
  if (checksum != fnv1a64(payload)) {
    throw Error(ErrorKind::kCorruptContainer, "checksum mismatch");
  }

  Reader in(payload);
  const std::uint64_t header_size = in.u64();
  const auto header_bytes = in.take(header_size);
  Bundle bundle;
  try {
    const Json header = Json::parse(header_bytes.begin(), header_bytes.end());
    bundle.extractor = extractor_from_json(header.at("extractor"));
    bundle.classifier.root = model_from_json(header.at("model"));
    bundle.classifier.head.layers = chain_from_json(header.at("head"));
    bundle.classes = header.at("classes").get<std::vector<std::string>>();
    bundle.model_config = config_from_json(header.at("model_config"));
    for (const Json& p : header.at("params")) {
      const auto rows = p.at("rows").get<Eigen::Index>();
      const auto cols = p.at("cols").get<Eigen::Index>();
      Matrix<float> t(rows, cols);
      for (Eigen::Index k = 0; k < t.size(); ++k) t.data()[k] = in.f32();
      bundle.classifier.params.add(p.at("name").get<std::string>(), std::move(t));
    }
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::kCorruptContainer, std::string("bad bundle header: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kCorruptContainer) throw;
    throw Error(ErrorKind::kCorruptContainer, e.what());
  }
  if (in.remaining() != 0) throw Error(ErrorKind::kCorruptContainer, "unread parameter bytes");
  check_model(bundle.classifier.root, bundle.classifier.params);
  check_chain(bundle.classifier.head.layers, bundle.classifier.params);
  if (bundle.classifier.head.layers.front().in_dim != bundle.classifier.root.embed_dim() ||
      bundle.classifier.head.classes() != bundle.classes.size()) {
    throw Error(ErrorKind::kCorruptContainer, "classifier head is inconsistent");
  }
  return bundle;
}

void save_bundle_file(const Bundle& bundle, const std::string& path) {
  const auto bytes = save_bundle(bundle);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::kIo, "failed writing '" + path + "'");
}

Bundle load_bundle_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open '" + path + "'");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  return load_bundle(bytes);
}

}  // namespace hmil
