#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace mqir::service {

/// Contents of docs/query_schema.json, compiled in.
std::string_view query_schema_text();

struct SchemaViolation {
  std::string pointer;  // JSON pointer into the checked document, "" for the root
  std::string keyword;  // failing schema keyword, or "json" for unparseable text
  std::string message;
};

/// Checks `json_text` against definitions/<definition> of the query schema.
/// Throws std::invalid_argument for an unknown definition name.
std::optional<SchemaViolation> check_against_schema(std::string_view definition,
                                                    std::string_view json_text);

}  // namespace mqir::service
