#pragma once

// JSONL and directory-of-.json input. Parse errors are ErrorKind::kParse with
// the 1-based line number in the message; unreadable paths are kIo.

#include <functional>
#include <string>
#include <vector>

#include "hmil/schema.hpp"
#include "hmil/training.hpp"

namespace hmil {

/// Calls `visit` for every document in order. Blank lines are skipped. A
/// directory yields its *.json files sorted by name, one document each.
void for_each_document(const std::string& path, const std::function<void(Json&&)>& visit);

std::vector<Json> read_documents(const std::string& path);

/// Lines of the form {"sample": ..., "label": "..."}, or, when `label_field`
/// is set, objects whose `label_field` member is the label (removed from the
/// sample). Non-string labels are converted to their JSON text.
LabeledCorpus read_labeled(const std::string& path, const std::string& label_field = "");

}  // namespace hmil
