#include "quantlab/json_writer.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace quantlab {

void JsonWriter::comma_if_needed() {
    if (pending_key_) {
        pending_key_ = false;
        return;  // value follows its key, no comma
    }
    if (!needs_comma_.empty()) {
        if (needs_comma_.back()) out_ += ',';
        needs_comma_.back() = true;
    }
}

JsonWriter& JsonWriter::begin_object() {
    comma_if_needed();
    out_ += '{';
    needs_comma_.push_back(false);
    return *this;
}

JsonWriter& JsonWriter::end_object() {
    if (needs_comma_.empty()) throw std::logic_error("end_object without begin");
    needs_comma_.pop_back();
    out_ += '}';
    return *this;
}

JsonWriter& JsonWriter::begin_array() {
    comma_if_needed();
    out_ += '[';
    needs_comma_.push_back(false);
    return *this;
}

JsonWriter& JsonWriter::end_array() {
    if (needs_comma_.empty()) throw std::logic_error("end_array without begin");
    needs_comma_.pop_back();
    out_ += ']';
    return *this;
}

JsonWriter& JsonWriter::key(std::string_view k) {
    if (!needs_comma_.empty()) {
        if (needs_comma_.back()) out_ += ',';
        needs_comma_.back() = true;
    }
    out_ += '"';
    out_ += escape(k);
    out_ += "\":";
    pending_key_ = true;
    return *this;
}

JsonWriter& JsonWriter::value(std::string_view s) {
    comma_if_needed();
    out_ += '"';
    out_ += escape(s);
    out_ += '"';
    return *this;
}

JsonWriter& JsonWriter::value(double d) {
    comma_if_needed();
    out_ += format_double(d);
    return *this;
}

JsonWriter& JsonWriter::value(int64_t i) {
    comma_if_needed();
    out_ += std::to_string(i);
    return *this;
}

JsonWriter& JsonWriter::value(uint64_t u) {
    comma_if_needed();
    out_ += std::to_string(u);
    return *this;
}

JsonWriter& JsonWriter::value(bool b) {
    comma_if_needed();
    out_ += b ? "true" : "false";
    return *this;
}

JsonWriter& JsonWriter::null() {
    comma_if_needed();
    out_ += "null";
    return *this;
}

JsonWriter& JsonWriter::raw(std::string_view fragment) {
    comma_if_needed();
    out_ += fragment;
    return *this;
}

const std::string& JsonWriter::str() const {
    if (!needs_comma_.empty()) throw std::logic_error("unterminated JSON container");
    return out_;
}

std::string JsonWriter::escape(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\r': out += "\\r"; break;
            case '\t': out += "\\t"; break;
            default:
                if (static_cast<unsigned char>(c) < 0x20) {
                    char buf[8];
                    std::snprintf(buf, sizeof buf, "\\u%04x", c);
                    out += buf;
                } else {
                    out += c;
                }
        }
    }
    return out;
}

std::string JsonWriter::format_double(double d) {
    if (!std::isfinite(d)) {
        throw std::invalid_argument("JSON output requires finite numbers");
    }
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", d);
    return buf;
}

} // namespace quantlab
