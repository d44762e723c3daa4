// Internal helpers shared by the structured-text readers/writers.
#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

#include <json.hpp>

#include "cogdrive/common.hpp"

namespace cogdrive::detail {

using Json = nlohmann::json;

/// Parses text, converting nlohmann parse errors into ValidationError with a line number.
inline Json parse_json(std::string_view text, std::string_view what) {
    try {
        return Json::parse(text);
    } catch (const Json::parse_error& e) {
        std::size_t line = 1;
        std::size_t limit = std::min<std::size_t>(e.byte, text.size());
        for (std::size_t i = 0; i < limit; ++i)
            if (text[i] == '\n') ++line;
        throw ValidationError(std::string(what) + ": parse error at line " + std::to_string(line) +
                              ": " + e.what());
    }
}

/// Checks the `format` field: family must match and the major version must be 1.
inline void check_format(const Json& doc, std::string_view expected) {
    if (!doc.is_object() || !doc.contains("format") || !doc["format"].is_string())
        throw ValidationError("missing 'format' field (expected " + std::string(expected) + ")");
    std::string got = doc["format"].get<std::string>();
    auto slash = expected.find('/');
    std::string family(expected.substr(0, slash + 1));
    if (got.rfind(family, 0) != 0)
        throw ValidationError("format '" + got + "' is not " + std::string(expected));
    std::string version = got.substr(family.size());
    std::string major = version.substr(0, version.find('.'));
    if (major != expected.substr(slash + 1))
        throw ValidationError("unsupported major version in format '" + got + "'");
}

inline double number_at(const Json& j, const std::string& field) {
    if (!j.is_number()) throw ValidationError(field + ": expected a number");
    return j.get<double>();
}

inline const Json& require(const Json& obj, const char* key, const std::string& where) {
    if (!obj.is_object() || !obj.contains(key))
        throw ValidationError(where + ": missing field '" + key + "'");
    return obj[key];
}

inline std::string string_at(const Json& obj, const char* key, const std::string& where) {
    const Json& v = require(obj, key, where);
    if (!v.is_string()) throw ValidationError(where + "." + key + ": expected a string");
    return v.get<std::string>();
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Writes through a temporary file and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw RuntimeFailure("cannot write '" + tmp.string() + "'");
        out << content;
        if (!out) throw RuntimeFailure("I/O failure writing '" + tmp.string() + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw RuntimeFailure("cannot rename into '" + path.string() + "': " + ec.message());
}

}  // namespace cogdrive::detail
