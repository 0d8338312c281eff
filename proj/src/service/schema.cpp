#include "mqir/service/schema.hpp"

#include <rapidjson/document.h>
#include <rapidjson/error/en.h>
#include <rapidjson/schema.h>
#include <rapidjson/stringbuffer.h>

#include <map>
#include <memory>
#include <mutex>
#include <vector>
#include <stdexcept>

namespace mqir::service {

namespace {

/// One compiled schema per definition, each a {"$ref": ...} wrapper around
/// the shared definitions so references between them resolve.
class SchemaCache {
 public:
  SchemaCache() {
    rapidjson::Document root;
    const auto text = query_schema_text();
    root.Parse(text.data(), text.size());
    if (root.HasParseError() || !root.HasMember("definitions")) {
      throw std::logic_error("embedded query schema is not valid JSON");
    }
    for (auto it = root["definitions"].MemberBegin(); it != root["definitions"].MemberEnd(); ++it) {
      const std::string name = it->name.GetString();
      auto doc = std::make_unique<rapidjson::Document>();
      doc->SetObject();
      auto& a = doc->GetAllocator();
      rapidjson::Value defs(root["definitions"], a);
      doc->AddMember("definitions", defs, a);
      const std::string ref = "#/definitions/" + name;
      doc->AddMember("$ref", rapidjson::Value(ref.c_str(), a), a);
      schemas_.emplace(name, std::make_unique<rapidjson::SchemaDocument>(*doc));
      docs_.push_back(std::move(doc));
    }
  }

  const rapidjson::SchemaDocument& get(std::string_view name) const {
    auto it = schemas_.find(std::string(name));
    if (it == schemas_.end()) {
      throw std::invalid_argument("query schema has no definition '" + std::string(name) + "'");
    }
    return *it->second;
  }

 private:
  std::vector<std::unique_ptr<rapidjson::Document>> docs_;
  std::map<std::string, std::unique_ptr<rapidjson::SchemaDocument>> schemas_;
};

const SchemaCache& cache() {
  static const SchemaCache c;
  return c;
}

}  // namespace

std::optional<SchemaViolation> check_against_schema(std::string_view definition,
                                                    std::string_view json_text) {
  const auto& schema = cache().get(definition);
  rapidjson::Document doc;
  doc.Parse(json_text.data(), json_text.size());
  if (doc.HasParseError()) {
    return SchemaViolation{"", "json",
                           std::string("malformed JSON: ") + rapidjson::GetParseError_En(doc.GetParseError()) +
                               " at offset " + std::to_string(doc.GetErrorOffset())};
  }
  rapidjson::SchemaValidator validator(schema);
  if (doc.Accept(validator)) {
    return std::nullopt;
  }
  rapidjson::StringBuffer where;
  validator.GetInvalidDocumentPointer().StringifyUriFragment(where);
  std::string pointer = where.GetString();
  if (!pointer.empty() && pointer[0] == '#') {
    pointer.erase(0, 1);
  }
  const std::string keyword = validator.GetInvalidSchemaKeyword();
  std::string message;
  if (keyword == "additionalProperties") {
    message = "unknown field '" + pointer + "'";
  } else if (keyword == "required") {
    message = "missing required field in '" + (pointer.empty() ? std::string("/") : pointer) + "'";
  } else {
    message = "field '" + (pointer.empty() ? std::string("/") : pointer) + "' violates '" + keyword + "'";
  }
  return SchemaViolation{pointer, keyword, message};
}

}  // namespace mqir::service
