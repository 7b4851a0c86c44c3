#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace quantlab {

// Streaming JSON writer with deterministic output: keys appear in insertion
// order, floats print with 9 significant digits ("%.9g"), and non-finite
// values throw instead of emitting Infinity/NaN. Reports must be
// byte-identical across reruns, which rules out serializers that pick their
// own float formatting.
class JsonWriter {
public:
    JsonWriter& begin_object();
    JsonWriter& end_object();
    JsonWriter& begin_array();
    JsonWriter& end_array();

    // Key for the next value inside an object.
    JsonWriter& key(std::string_view k);

    JsonWriter& value(std::string_view s);
    JsonWriter& value(const char* s) { return value(std::string_view(s)); }
    JsonWriter& value(double d);
    JsonWriter& value(int64_t i);
    JsonWriter& value(uint64_t u);
    JsonWriter& value(int i) { return value(static_cast<int64_t>(i)); }
    JsonWriter& value(unsigned u) { return value(static_cast<uint64_t>(u)); }
    JsonWriter& value(bool b);
    JsonWriter& null();

    // key + scalar in one call.
    template <typename T>
    JsonWriter& kv(std::string_view k, T v) {
        key(k);
        return value(v);
    }
    JsonWriter& kv_null(std::string_view k) {
        key(k);
        return null();
    }

    // Splice a pre-rendered JSON fragment verbatim (used to consolidate
    // already-deterministic section files without re-parsing).
    JsonWriter& raw(std::string_view fragment);

    const std::string& str() const;

    static std::string escape(std::string_view s);
    // The repo-wide float format: 9 significant digits, shortest exponent.
    static std::string format_double(double d);

private:
    void comma_if_needed();

    std::string out_;
    std::vector<bool> needs_comma_;  // one flag per open container
    bool pending_key_ = false;
};

} // namespace quantlab
