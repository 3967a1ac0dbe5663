#include "traffic/csv.hpp"

#include <stdexcept>

namespace traffic::csv {

std::string escape(std::string_view field) {
    if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

std::string join_row(const std::vector<std::string>& fields) {
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out += ',';
        out += escape(fields[i]);
    }
    return out;
}

std::optional<std::vector<std::string>> read_row(std::istream& in) {
    if (in.peek() == std::char_traits<char>::eof()) return std::nullopt;

    std::vector<std::string> fields(1);
    bool quoted = false;
    bool after_quote = false;
    int ch;
    while ((ch = in.get()) != std::char_traits<char>::eof()) {
        char c = static_cast<char>(ch);
        if (quoted) {
            if (c == '"') {
                if (in.peek() == '"') {
                    fields.back() += '"';
                    in.get();
                } else {
                    quoted = false;
                    after_quote = true;
                }
            } else {
                fields.back() += c;
            }
            continue;
        }
        if (c == ',') {
            fields.emplace_back();
            after_quote = false;
        } else if (c == '\n') {
            break;
        } else if (c == '\r') {
            if (in.peek() == '\n') in.get();
            break;
        } else if (c == '"' && fields.back().empty() && !after_quote) {
            quoted = true;
        } else {
            fields.back() += c;
        }
    }
    if (quoted) throw std::runtime_error("unterminated quoted CSV field");
    return fields;
}

}  // namespace traffic::csv
