#include "hmil/jsonl.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "hmil/error.hpp"

namespace hmil {

namespace fs = std::filesystem;

namespace {

bool blank(const std::string& line) {
  return std::all_of(line.begin(), line.end(),
                     [](unsigned char c) { return c == ' ' || c == '\t' || c == '\r'; });
}

std::string label_text(const Json& label) {
  return label.is_string() ? label.get<std::string>() : label.dump();
}

}  // namespace

void for_each_document(const std::string& path, const std::function<void(Json&&)>& visit) {
  std::error_code ec;
  if (fs::is_directory(path, ec)) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(path, ec)) {
      if (entry.is_regular_file() && entry.path().extension() == ".json") {
        files.push_back(entry.path());
      }
    }
    if (ec) throw Error(ErrorKind::kIo, "cannot list '" + path + "': " + ec.message());
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      std::ifstream in(file, std::ios::binary);
      if (!in) throw Error(ErrorKind::kIo, "cannot open '" + file.string() + "'");
      Json doc = Json::parse(in, nullptr, false);
      if (doc.is_discarded()) {
        throw Error(ErrorKind::kParse, file.string() + ": invalid JSON");
      }
      visit(std::move(doc));
    }
    return;
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open '" + path + "'");
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (blank(line)) continue;
    Json doc;
    try {
      doc = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw Error(ErrorKind::kParse, path + ": line " + std::to_string(number) + ": " + e.what());
    }
    visit(std::move(doc));
  }
  if (in.bad()) throw Error(ErrorKind::kIo, "failed reading '" + path + "'");
}

std::vector<Json> read_documents(const std::string& path) {
  std::vector<Json> out;
  for_each_document(path, [&](Json&& doc) { out.push_back(std::move(doc)); });
  return out;
}

LabeledCorpus read_labeled(const std::string& path, const std::string& label_field) {
  LabeledCorpus corpus;
  std::size_t number = 0;
  for_each_document(path, [&](Json&& doc) {
    ++number;
    const std::string where = path + ": record " + std::to_string(number);
    if (!doc.is_object()) throw Error(ErrorKind::kParse, where + ": expected a JSON object");
    if (label_field.empty()) {
      if (!doc.contains("sample") || !doc.contains("label")) {
        throw Error(ErrorKind::kParse, where + ": expected \"sample\" and \"label\" members");
      }
      corpus.add(std::move(doc["sample"]), label_text(doc["label"]));
    } else {
      const auto it = doc.find(label_field);
      if (it == doc.end()) {
        throw Error(ErrorKind::kParse, where + ": missing label field '" + label_field + "'");
      }
      std::string label = label_text(*it);
      doc.erase(it);
      corpus.add(std::move(doc), std::move(label));
    }
  });
  return corpus;
}

}  // namespace hmil
