#include "cbt/csv.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <limits>

#include "cbt/error.hpp"

namespace cbt {

std::string format_double(double v) {
    char buf[40];
    for (int prec = 1; prec < 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) return buf;
    }
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double parse_double(const std::string& s) {
    if (s.empty()) throw DataError("empty number");
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size() || errno == ERANGE) {
        throw DataError("bad number '" + s + "'");
    }
    return v;
}

std::int64_t parse_int(const std::string& s) {
    if (s.empty()) throw DataError("empty integer");
    errno = 0;
    char* end = nullptr;
    const long long v = std::strtoll(s.c_str(), &end, 10);
    if (end != s.c_str() + s.size() || errno == ERANGE) {
        throw DataError("bad integer '" + s + "'");
    }
    return v;
}

std::uint64_t parse_uint(const std::string& s) {
    if (s.empty() || s[0] == '-') throw DataError("bad unsigned integer '" + s + "'");
    errno = 0;
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
    if (end != s.c_str() + s.size() || errno == ERANGE) {
        throw DataError("bad unsigned integer '" + s + "'");
    }
    return v;
}

std::string csv_field(const std::string& raw) {
    bool needs_quotes = false;
    for (char c : raw) {
        if (c == ',' || c == '"' || c == '\n' || c == '\r') {
            needs_quotes = true;
            break;
        }
    }
    if (!needs_quotes) return raw;
    std::string out = "\"";
    for (char c : raw) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += '"';
    return out;
}

std::string csv_row(const std::vector<std::string>& cells) {
    std::string out;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out += ',';
        out += csv_field(cells[i]);
    }
    out += '\n';
    return out;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    std::size_t i = 0;
    const std::size_t n = text.size();
    bool row_started = false;

    auto end_field = [&] {
        row.push_back(std::move(field));
        field.clear();
    };
    auto end_row = [&] {
        end_field();
        rows.push_back(std::move(row));
        row.clear();
        row_started = false;
    };

    while (i < n) {
        row_started = true;
        if (text[i] == '"') {
            ++i;
            bool closed = false;
            while (i < n) {
                if (text[i] == '"') {
                    if (i + 1 < n && text[i + 1] == '"') {
                        field += '"';
                        i += 2;
                    } else {
                        ++i;
                        closed = true;
                        break;
                    }
                } else {
                    field += text[i++];
                }
            }
            if (!closed) throw DataError("csv: unterminated quoted field");
            if (i < n && text[i] != ',' && text[i] != '\n' && text[i] != '\r') {
                throw DataError("csv: unexpected character after closing quote");
            }
        } else {
            while (i < n && text[i] != ',' && text[i] != '\n' && text[i] != '\r') {
                field += text[i++];
            }
        }
        if (i >= n) break;
        if (text[i] == ',') {
            end_field();
            ++i;
        } else {
            if (text[i] == '\r' && i + 1 < n && text[i + 1] == '\n') ++i;
            ++i;
            end_row();
        }
    }
    if (row_started || !row.empty()) end_row();
    return rows;
}

}  // namespace cbt
