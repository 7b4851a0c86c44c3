#pragma once

// Minimal JSON-Schema checker (draft-07 subset) for validating report
// documents in tests. Supports exactly what the bundled schema uses:
//   - "type": a string or an array of strings; "integer" values also
//     satisfy "number"
//   - "required": array of keys that must be present
//   - "properties": per-key subschemas
//   - "additionalProperties": false forbids keys absent from properties
//   - "items": single subschema applied to every array element
//   - "enum": list of allowed scalar values
// Returns a list of human-readable violations (empty means valid).

#include <string>
#include <vector>

#include "json.hpp"

namespace schema_check {

inline bool type_matches(const nlohmann::json& doc, const std::string& type) {
    if (type == "object") return doc.is_object();
    if (type == "array") return doc.is_array();
    if (type == "string") return doc.is_string();
    if (type == "boolean") return doc.is_boolean();
    if (type == "null") return doc.is_null();
    if (type == "integer") return doc.is_number_integer() || doc.is_number_unsigned();
    if (type == "number") return doc.is_number();
    return false;
}

inline void validate(const nlohmann::json& doc, const nlohmann::json& schema,
                     const std::string& path, std::vector<std::string>& errors) {
    if (schema.contains("type")) {
        const nlohmann::json& t = schema["type"];
        bool ok = false;
        if (t.is_string()) {
            ok = type_matches(doc, t.get<std::string>());
        } else {
            for (const auto& alt : t) {
                if (type_matches(doc, alt.get<std::string>())) {
                    ok = true;
                    break;
                }
            }
        }
        if (!ok) {
            errors.push_back(path + ": type mismatch, got " + std::string(doc.type_name()));
            return;
        }
    }
    if (schema.contains("enum")) {
        bool ok = false;
        for (const auto& allowed : schema["enum"]) {
            if (doc == allowed) {
                ok = true;
                break;
            }
        }
        if (!ok) errors.push_back(path + ": value not in enum");
    }
    if (doc.is_object()) {
        if (schema.contains("required")) {
            for (const auto& req : schema["required"]) {
                if (!doc.contains(req.get<std::string>())) {
                    errors.push_back(path + ": missing required key '" +
                                     req.get<std::string>() + "'");
                }
            }
        }
        const bool forbid_extra = schema.contains("additionalProperties") &&
                                  schema["additionalProperties"].is_boolean() &&
                                  !schema["additionalProperties"].get<bool>();
        for (auto it = doc.begin(); it != doc.end(); ++it) {
            const bool known =
                schema.contains("properties") && schema["properties"].contains(it.key());
            if (known) {
                validate(it.value(), schema["properties"][it.key()], path + "." + it.key(),
                         errors);
            } else if (forbid_extra) {
                errors.push_back(path + ": unexpected key '" + it.key() + "'");
            }
        }
    }
    if (doc.is_array() && schema.contains("items")) {
        for (size_t i = 0; i < doc.size(); ++i) {
            validate(doc[i], schema["items"], path + "[" + std::to_string(i) + "]", errors);
        }
    }
}

inline std::vector<std::string> check(const nlohmann::json& doc, const nlohmann::json& schema) {
    std::vector<std::string> errors;
    validate(doc, schema, "$", errors);
    return errors;
}

} // namespace schema_check
