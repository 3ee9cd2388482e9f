#include "lesionrisk/error.hpp"

#include <utility>

namespace lesionrisk {
namespace {

std::string join_issues(const std::vector<FieldIssue>& issues, const std::string& context) {
  std::string out = context.empty() ? std::string{} : context + ": ";
  for (std::size_t i = 0; i < issues.size(); ++i) {
    if (i > 0) out += "; ";
    out += issues[i].message;
  }
  return out;
}

}  // namespace

ValidationError::ValidationError(std::vector<FieldIssue> issues, const std::string& context)
    : Error(join_issues(issues, context)), issues_(std::move(issues)) {}

ValidationError::ValidationError(std::string field, std::string message)
    : ValidationError(std::vector<FieldIssue>{{std::move(field), std::move(message)}}) {}

ParseError::ParseError(std::size_t row, std::string field, const std::string& what)
    : Error(row > 0 ? "row " + std::to_string(row) + (field.empty() ? "" : ", field '" + field + "'") + ": " + what
                    : what),
      row_(row),
      field_(std::move(field)) {}

}  // namespace lesionrisk
