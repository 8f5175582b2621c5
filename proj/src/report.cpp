#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <vector>

#include "hmil/schema.hpp"
#include "overloaded.hpp"

namespace hmil {

namespace {

using detail::Overloaded;

constexpr std::size_t kTopValues = 20;

std::string escape(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&#39;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string ratio(std::uint64_t part, std::uint64_t whole) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1)
     << (whole == 0 ? 0.0 : 100.0 * static_cast<double>(part) / static_cast<double>(whole))
     << "%";
  return os.str();
}

std::string number(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

class ReportWriter {
 public:
  ReportWriter(std::ostringstream& os, const SchemaConfig& config) : os_(os), config_(config) {}

  // `parent_total` is the occurrence count of the enclosing position, used for
  // the presence ratio of dictionary entries.
  void node(const SchemaNode& s, const std::string& path, std::uint64_t parent_total,
            const std::string& label) {
    std::visit(Overloaded{
                   [&](const std::monostate&) {
                     header(path, label + " (never observed)", 0, parent_total);
                     os_ << "</section>\n";
                   },
                   [&](const LeafSchema& l) { leaf(l, path, parent_total, label); },
                   [&](const ListSchema& l) { list(l, path, parent_total, label); },
                   [&](const DictSchema& d) { dict(d, path, parent_total, label); },
                   [&](const PolymorphicSchema& p) { poly(p, path, parent_total, label); },
               },
               s.node);
  }

 private:
  void header(const std::string& path, const std::string& kind, std::uint64_t count,
              std::uint64_t parent_total) {
    os_ << "<section class=\"node\">\n<h3><code>" << escape(path.empty() ? std::string("$") : path) << "</code> <span class=\"kind\">"
        << escape(kind) << "</span></h3>\n<p>occurrences: " << count;
    if (parent_total > 0) os_ << " &middot; presence: " << ratio(count, parent_total);
    os_ << "</p>\n";
  }

  void bars(const std::vector<std::pair<std::string, std::uint64_t>>& rows,
            std::uint64_t scale) {
    os_ << "<table class=\"bars\">\n";
    for (const auto& [label, count] : rows) {
      const double width =
          scale == 0 ? 0.0 : 100.0 * static_cast<double>(count) / static_cast<double>(scale);
      os_ << "<tr><td class=\"lbl\">" << escape(label) << "</td><td class=\"cnt\">" << count
          << "</td><td class=\"bar\"><div style=\"width:" << number(width)
          << "%\"></div></td></tr>\n";
    }
    os_ << "</table>\n";
  }

  void leaf(const LeafSchema& l, const std::string& path, std::uint64_t parent_total,
            const std::string& label) {
    header(path, label.empty() ? "leaf" : label, l.total, parent_total);
    static constexpr const char* kNames[] = {"null", "bool", "integer", "real", "string"};
    os_ << "<p>kinds:";
    for (std::size_t k = 0; k < kValueKindCount; ++k) {
      if (l.kinds[k] > 0) os_ << " " << kNames[k] << "=" << l.kinds[k];
    }
    os_ << "</p>\n";
    if (l.numeric.count > 0) {
      os_ << "<p>numeric: min " << number(l.numeric.min) << ", max " << number(l.numeric.max)
          << ", mean " << number(l.numeric.mean()) << ", stddev "
          << number(std::sqrt(std::max(0.0, l.numeric.variance()))) << "</p>\n";
    }
    os_ << "<p>distinct values: ";
    if (l.saturated) {
      os_ << "<span class=\"sat\">≥ " << config_.max_distinct << " distinct values</span>";
    } else {
      os_ << l.histogram.size();
    }
    os_ << "</p>\n";

    std::vector<std::pair<std::string, std::uint64_t>> top(l.histogram.begin(),
                                                           l.histogram.end());
    std::stable_sort(top.begin(), top.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    if (top.size() > kTopValues) top.resize(kTopValues);
    if (!top.empty()) {
      os_ << "<p>top values:</p>\n";
      bars(top, l.total);
    }
    os_ << "</section>\n";
  }

  void list(const ListSchema& l, const std::string& path, std::uint64_t parent_total,
            const std::string& label) {
    header(path, label.empty() ? "list" : label, l.total, parent_total);
    std::vector<std::pair<std::string, std::uint64_t>> rows;
    for (const auto& [len, count] : l.lengths) rows.emplace_back(std::to_string(len), count);
    os_ << "<p>list lengths:</p>\n";
    bars(rows, l.total);
    os_ << "</section>\n";
    node(*l.child, path + "[]", 0, "");
  }

  void dict(const DictSchema& d, const std::string& path, std::uint64_t parent_total,
            const std::string& label) {
    header(path, label.empty() ? "dict" : label, d.total, parent_total);
    os_ << "<p>keys: " << d.entries.size() << "</p>\n</section>\n";
    for (const auto& [key, entry] : d.entries) {
      const std::string child = path.empty() ? key : path + "." + key;
      // Presence is relative to the dictionary occurrences.
      node(*entry.child, child, d.total, "");
    }
  }

  void poly(const PolymorphicSchema& p, const std::string& path, std::uint64_t parent_total,
            const std::string&) {
    SchemaNode whole{p};
    header(path, "polymorphic", whole.total(), parent_total);
    os_ << "</section>\n";
    if (p.leaf) node(**p.leaf, path, whole.total(), "leaf branch");
    if (p.list) node(**p.list, path, whole.total(), "list branch");
    if (p.dict) node(**p.dict, path, whole.total(), "dict branch");
  }

  std::ostringstream& os_;
  const SchemaConfig& config_;
};

constexpr const char* kStyle = R"(body{font-family:sans-serif;margin:2em;color:#222}
h1{font-size:1.4em}h3{font-size:1em;margin:0}
.node{border-left:3px solid #8ab;padding:.3em .8em;margin:.6em 0}
.kind{color:#678;font-weight:normal}
.banner{background:#eef;padding:.5em 1em}
.sat{color:#a40}
table.bars{border-collapse:collapse;font-size:.85em}
table.bars td{padding:1px 6px}
td.lbl{max-width:28em;overflow:hidden;text-overflow:ellipsis;white-space:nowrap}
td.bar{width:240px}td.bar div{background:#8ab;height:.8em}
)";

}  // namespace

std::string render_report(const SchemaNode& schema, const SchemaConfig& config) {
  std::ostringstream os;
  const std::uint64_t docs = schema.total();
  os << "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n"
     << "<title>Schema report</title>\n<style>\n"
     << kStyle << "</style>\n</head>\n<body>\n<h1>Schema report</h1>\n"
     << "<p class=\"banner\">" << docs << " documents</p>\n";
  if (docs > 0) {
    ReportWriter writer(os, config);
    writer.node(schema, "", 0, "root");
  }
  os << "</body>\n</html>\n";
  return os.str();
}

}  // namespace hmil
