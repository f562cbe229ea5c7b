#pragma once

// Classifies and expands inline citation notation as printed in a PDF:
// "[3]", "[12 -- 15]", "[1, 4, 7]", "(Nair et al., 2022; Chen, 2020)",
// "Smith and Lee (2019a)".

#include <algorithm>
#include <cctype>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include "threadloom/detail/text.hpp"

namespace threadloom {

enum class MarkerStyle { NumericBracket, NumericRange, NumericList, AuthorYear, Unknown };

inline const char* to_string(MarkerStyle s) {
    switch (s) {
        case MarkerStyle::NumericBracket: return "NUMERIC_BRACKET";
        case MarkerStyle::NumericRange: return "NUMERIC_RANGE";
        case MarkerStyle::NumericList: return "NUMERIC_LIST";
        case MarkerStyle::AuthorYear: return "AUTHOR_YEAR";
        case MarkerStyle::Unknown: return "UNKNOWN";
    }
    return "UNKNOWN";
}

// Author-year candidate key: folded first-author surname and printed year,
// e.g. "nair:2022" or "van der berg:2019a".
struct AuthorYearKey {
    std::string surname;
    int year = 0;
    std::string suffix;  // disambiguation letter, if printed

    std::string str() const { return surname + ":" + std::to_string(year) + suffix; }
};

struct MarkerParse {
    std::string surface;
    MarkerStyle style = MarkerStyle::Unknown;
    // Numeric labels as decimal strings, or AuthorYearKey::str() values.
    std::vector<std::string> expanded_keys;
    std::vector<AuthorYearKey> author_year;
};

// Ranges wider than this are treated as misparses.
inline constexpr int kMaxRangeSpan = 500;

namespace detail::grammar {

// Maps dash variants to '-', odd spaces to ' ', and collapses whitespace.
inline std::string normalize_surface(std::string_view s) {
    std::string out;
    std::size_t pos = 0;
    while (pos < s.size()) {
        const char32_t cp = next_code_point(s, pos);
        if ((cp >= 0x2010 && cp <= 0x2015) || cp == 0x2212 || cp == 0xFE58 || cp == 0xFE63 || cp == 0xFF0D) {
            out.push_back('-');
        } else if (cp == 0xA0 || cp == 0x2007 || cp == 0x2009 || cp == 0x202F || cp == 0x200A) {
            out.push_back(' ');
        } else {
            append_utf8(out, cp);
        }
    }
    return collapse_whitespace(out);
}

struct NumericItem {
    int first = 0;
    int last = 0;
    bool is_range = false;
};

// item (sep item)* where item = N | N '-'+ N; separators ',' or ';'.
inline std::optional<std::vector<NumericItem>> parse_numeric(std::string_view s, std::size_t max_digits) {
    std::vector<NumericItem> items;
    std::size_t i = 0;
    auto skip_ws = [&] {
        while (i < s.size() && s[i] == ' ') ++i;
    };
    auto number = [&]() -> std::optional<int> {
        skip_ws();
        const std::size_t start = i;
        while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
        if (i == start || i - start > max_digits) return std::nullopt;
        return std::stoi(std::string(s.substr(start, i - start)));
    };
    for (;;) {
        auto a = number();
        if (!a) return std::nullopt;
        NumericItem item{*a, *a, false};
        skip_ws();
        if (i < s.size() && s[i] == '-') {
            while (i < s.size() && s[i] == '-') ++i;
            auto b = number();
            if (!b) return std::nullopt;
            item.last = *b;
            item.is_range = true;
            skip_ws();
        }
        items.push_back(item);
        if (i == s.size()) break;
        if (s[i] != ',' && s[i] != ';') return std::nullopt;
        ++i;
    }
    return items;
}

inline std::optional<MarkerParse> classify_numeric(const std::vector<NumericItem>& items) {
    MarkerParse p;
    auto push = [&](int n) {
        const std::string key = std::to_string(n);
        for (const auto& k : p.expanded_keys)
            if (k == key) return;
        p.expanded_keys.push_back(key);
    };
    for (const auto& it : items) {
        if (it.is_range && (it.last < it.first || it.last - it.first > kMaxRangeSpan)) return std::nullopt;
        for (int n = it.first; n <= it.last; ++n) push(n);
    }
    if (items.size() == 1) {
        p.style = items[0].is_range && items[0].last > items[0].first ? MarkerStyle::NumericRange
                                                                      : MarkerStyle::NumericBracket;
    } else {
        p.style = MarkerStyle::NumericList;
    }
    return p;
}

inline char closer_for(char open) {
    switch (open) {
        case '[': return ']';
        case '(': return ')';
        case '{': return '}';
        default: return 0;
    }
}

// Inner text when `s` is one balanced bracket group.
inline std::optional<std::string_view> unwrap(std::string_view s) {
    if (s.size() < 2) return std::nullopt;
    const char close = closer_for(s.front());
    if (!close || s.back() != close) return std::nullopt;
    int depth = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == s.front()) ++depth;
        if (s[i] == close && --depth == 0 && i + 1 != s.size()) return std::nullopt;
    }
    return trim_view(s.substr(1, s.size() - 2));
}

inline const std::regex& year_regex() {
    static const std::regex re(R"((^|[^0-9A-Za-z])(1[5-9][0-9]{2}|20[0-9]{2})([a-z]?)(?![0-9A-Za-z]))");
    return re;
}

inline std::string strip_prefixes(std::string s) {
    static const std::regex prefix(
        R"(^\s*(for (a )?(review|example|instance)s?,?\s*(see)?|see also|see, e\.g\.,?|see|e\.g\.,?|i\.e\.,?|cf\.?|compare)\s+)",
        std::regex::icase);
    for (;;) {
        std::smatch m;
        if (!std::regex_search(s, m, prefix)) return s;
        s = m.suffix().str();
    }
}

// First author's surname from an author phrase such as "Nair et al." or
// "van der Berg and Smith".
inline std::string first_surname(std::string_view authors) {
    std::string a = collapse_whitespace(authors);
    static const std::regex cut(R"((\s+et\.?\s*al\b.*$)|(\s+(and|&)\s+.*$)|(\s*,.*$))", std::regex::icase);
    a = std::regex_replace(a, cut, "");
    a = trim(a);
    while (!a.empty() && (a.back() == '.' || a.back() == ',' || a.back() == '\'')) a.pop_back();
    // Possessive "Smith's".
    if (a.size() > 2 && a.ends_with("'s")) a.resize(a.size() - 2);
    const auto tokens = tokenize(a);
    bool has_alpha = false;
    for (const auto& t : tokens)
        for (char c : t) has_alpha |= std::isalpha(static_cast<unsigned char>(c)) != 0 || static_cast<unsigned char>(c) >= 0x80;
    if (!has_alpha) return {};
    for (const auto& t : tokens)
        for (char c : t)
            if (std::isdigit(static_cast<unsigned char>(c))) return {};
    return join(tokens, " ");
}

// One ';'-separated author-year group, e.g. "Smith and Lee, 2019, 2020a".
inline std::optional<std::vector<AuthorYearKey>> parse_author_group(std::string_view part) {
    const std::string text = strip_prefixes(std::string(part));
    std::vector<AuthorYearKey> keys;

    auto begin = std::sregex_iterator(text.begin(), text.end(), year_regex());
    auto end = std::sregex_iterator();
    std::size_t author_end = std::string::npos;
    std::size_t last_end = 0;
    std::vector<std::pair<int, std::string>> years;
    for (auto it = begin; it != end; ++it) {
        const auto& m = *it;
        const std::size_t year_pos = static_cast<std::size_t>(m.position(2));
        if (author_end == std::string::npos) {
            author_end = year_pos;
        } else {
            // Only separators may sit between consecutive years.
            for (std::size_t k = last_end; k < year_pos; ++k)
                if (text[k] != ',' && text[k] != ' ' && text[k] != ';') return std::nullopt;
        }
        years.emplace_back(std::stoi(m.str(2)), m.str(3));
        last_end = year_pos + m.length(2) + m.length(3);
    }
    if (years.empty()) return std::nullopt;
    // Anything after the years must be a comma-led locator such as ", p. 4".
    const auto tail = trim_view(std::string_view(text).substr(last_end));
    if (!tail.empty() && tail.front() != ',') return std::nullopt;

    std::string authors(trim_view(std::string_view(text).substr(0, author_end)));
    while (!authors.empty() && (authors.back() == ',' || authors.back() == ' ')) authors.pop_back();
    const std::string surname = first_surname(authors);
    if (surname.empty()) return std::nullopt;
    for (const auto& [year, suffix] : years) keys.push_back({surname, year, suffix});
    return keys;
}

inline std::optional<MarkerParse> parse_author_year_list(std::string_view inner) {
    MarkerParse p;
    std::size_t start = 0;
    const std::string s(inner);
    for (;;) {
        const std::size_t semi = s.find(';', start);
        const std::string part = s.substr(start, semi == std::string::npos ? std::string::npos : semi - start);
        if (!trim_view(part).empty()) {
            auto keys = parse_author_group(part);
            if (!keys) return std::nullopt;
            for (auto& k : *keys) p.author_year.push_back(std::move(k));
        }
        if (semi == std::string::npos) break;
        start = semi + 1;
    }
    if (p.author_year.empty()) return std::nullopt;
    p.style = MarkerStyle::AuthorYear;
    return p;
}

// Narrative form: "Smith et al. (2019)" or "Smith and Lee [2019a, 2020]".
inline std::optional<MarkerParse> parse_narrative(std::string_view s) {
    if (s.size() < 4) return std::nullopt;
    const char close = s.back();
    const char open = close == ')' ? '(' : close == ']' ? '[' : 0;
    if (!open) return std::nullopt;
    const std::size_t o = s.rfind(open);
    if (o == std::string_view::npos || o == 0) return std::nullopt;
    const std::string authors(trim_view(s.substr(0, o)));
    const std::string inner(trim_view(s.substr(o + 1, s.size() - o - 2)));
    // The bracket must hold years only.
    auto years = parse_author_group("X " + inner);
    if (!years) return std::nullopt;
    const std::string surname = first_surname(authors);
    if (surname.empty()) return std::nullopt;
    MarkerParse p;
    p.style = MarkerStyle::AuthorYear;
    for (auto k : *years) {
        k.surname = surname;
        p.author_year.push_back(std::move(k));
    }
    return p;
}

}  // namespace detail::grammar

inline MarkerParse parse_marker(std::string_view surface) {
    namespace g = detail::grammar;
    const std::string s = g::normalize_surface(surface);

    auto finish = [&](MarkerParse p) {
        p.surface = std::string(surface);
        if (p.style == MarkerStyle::AuthorYear) {
            p.expanded_keys.clear();
            for (const auto& k : p.author_year) {
                const std::string key = k.str();
                if (std::find(p.expanded_keys.begin(), p.expanded_keys.end(), key) == p.expanded_keys.end())
                    p.expanded_keys.push_back(key);
            }
        }
        return p;
    };

    if (auto inner = g::unwrap(s)) {
        // Parenthesised four-digit numbers are years, not labels.
        const std::size_t digits = s.front() == '(' ? 3 : 4;
        if (auto items = g::parse_numeric(*inner, digits)) {
            if (auto p = g::classify_numeric(*items)) return finish(std::move(*p));
            return finish(MarkerParse{});
        }
        if (auto p = g::parse_author_year_list(*inner)) return finish(std::move(*p));
    }
    // Superscript-style bare labels: short numerals only, so years are not
    // mistaken for labels.
    if (auto items = g::parse_numeric(s, 3)) {
        if (auto p = g::classify_numeric(*items)) return finish(std::move(*p));
    }
    if (auto p = g::parse_narrative(s)) return finish(std::move(*p));
    return finish(MarkerParse{});
}

}  // namespace threadloom
