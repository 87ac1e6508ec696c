#pragma once

#include <cctype>
#include <cstdint>
#include <limits>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "error.hpp"

namespace ood {

enum class TermKind { V, Pi, PiBar };

inline std::string_view term_name(TermKind kind) {
    switch (kind) {
        case TermKind::V: return "v";
        case TermKind::Pi: return "pi";
        case TermKind::PiBar: return "pibar";
    }
    return "?";
}

/// A base vector repeated `factor` times end to end.
struct Term {
    TermKind kind = TermKind::V;
    std::uint32_t factor = 1;

    friend bool operator==(const Term&, const Term&) = default;
};

/// Elementwise sum of two or more terms.
struct Add {
    std::vector<Term> terms;

    friend bool operator==(const Add&, const Add&) = default;
};

using AddOrTerm = std::variant<Term, Add>;

/// Concatenation of two or more children.
struct Append {
    std::vector<AddOrTerm> children;

    friend bool operator==(const Append&, const Append&) = default;
};

/// A composition expression. The variant nesting caps the tree at depth 2:
/// a term, an add of terms, or an append of add-or-term children.
using Recipe = std::variant<Term, Add, Append>;

/// Lengths of the base vectors a recipe draws from. Zero means "not available".
struct BaseDims {
    std::size_t v = 0;
    std::size_t pi = 0;
    std::size_t pibar = 0;

    std::size_t of(TermKind kind) const {
        switch (kind) {
            case TermKind::V: return v;
            case TermKind::Pi: return pi;
            case TermKind::PiBar: return pibar;
        }
        return 0;
    }
};

namespace detail {

class RecipeParser {
public:
    explicit RecipeParser(std::string_view text) : text_(text) {}

    Recipe parse() {
        skip_ws();
        if (at_end()) {
            throw ParseError("empty recipe", pos_);
        }
        Recipe result;
        if (peek() == '(') {
            result = parse_append();
        } else {
            AddOrTerm node = parse_add_or_term();
            if (auto* t = std::get_if<Term>(&node)) {
                result = *t;
            } else {
                result = std::get<Add>(node);
            }
        }
        skip_ws();
        if (!at_end()) {
            throw ParseError(std::string("unexpected '") + text_[pos_] + "'", pos_);
        }
        return result;
    }

private:
    bool at_end() const { return pos_ >= text_.size(); }
    char peek() const { return at_end() ? '\0' : text_[pos_]; }

    void skip_ws() {
        while (!at_end() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }

    Append parse_append() {
        const std::size_t open = pos_;
        ++pos_;  // '('
        Append node;
        node.children.push_back(parse_add_or_term());
        skip_ws();
        while (peek() == ',') {
            ++pos_;
            node.children.push_back(parse_add_or_term());
            skip_ws();
        }
        if (peek() != ')') {
            if (at_end()) throw ParseError("unbalanced '('", open);
            throw ParseError(std::string("expected ',' or ')' but found '") + peek() + "'", pos_);
        }
        ++pos_;
        if (node.children.size() < 2) {
            throw ParseError("append needs at least two children", open);
        }
        return node;
    }

    AddOrTerm parse_add_or_term() {
        Term first = parse_term();
        skip_ws();
        if (peek() != '+') return first;
        Add node{{first}};
        while (peek() == '+') {
            ++pos_;
            node.terms.push_back(parse_term());
            skip_ws();
        }
        return node;
    }

    Term parse_term() {
        skip_ws();
        const std::size_t start = pos_;
        if (at_end()) throw ParseError("expected a term but input ended", pos_);
        Term term;
        if (std::isdigit(static_cast<unsigned char>(peek()))) {
            if (peek() == '0') throw ParseError("factor must be a positive integer", pos_);
            std::uint64_t value = 0;
            while (!at_end() && std::isdigit(static_cast<unsigned char>(peek()))) {
                value = value * 10 + static_cast<std::uint64_t>(peek() - '0');
                if (value > std::numeric_limits<std::uint32_t>::max()) {
                    throw ParseError("factor is too large", start);
                }
                ++pos_;
            }
            term.factor = static_cast<std::uint32_t>(value);
            skip_ws();
        }
        term.kind = parse_name();
        return term;
    }

    TermKind parse_name() {
        const std::size_t start = pos_;
        // Greek aliases: "π" (U+03C0) optionally followed by a combining macron/overline.
        static constexpr std::string_view kPi = "\xCF\x80";
        static constexpr std::string_view kMacron = "\xCC\x84";
        static constexpr std::string_view kOverline = "\xCC\x85";
        if (text_.substr(pos_, kPi.size()) == kPi) {
            pos_ += kPi.size();
            auto rest = text_.substr(pos_);
            if (rest.starts_with(kMacron) || rest.starts_with(kOverline)) {
                pos_ += kMacron.size();
                return TermKind::PiBar;
            }
            return TermKind::Pi;
        }
        std::string word;
        while (!at_end() && std::isalpha(static_cast<unsigned char>(peek()))) {
            word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(peek()))));
            ++pos_;
        }
        if (word == "v") return TermKind::V;
        if (word == "pi") return TermKind::Pi;
        if (word == "pibar") return TermKind::PiBar;
        if (word.empty()) {
            throw ParseError(at_end() ? std::string("expected a term name but input ended")
                                      : std::string("expected a term name but found '") +
                                            text_[start] + "'",
                             start);
        }
        throw ParseError("unknown term '" + word + "'", start);
    }

    std::string_view text_;
    std::size_t pos_ = 0;
};

inline void render_term(std::string& out, const Term& t) {
    if (t.factor != 1) out += std::to_string(t.factor);
    out += term_name(t.kind);
}

inline void render_add(std::string& out, const Add& a) {
    for (std::size_t i = 0; i < a.terms.size(); ++i) {
        if (i) out += '+';
        render_term(out, a.terms[i]);
    }
}

inline std::size_t checked_mul(std::size_t a, std::size_t b) {
    if (a != 0 && b > std::numeric_limits<std::size_t>::max() / a) {
        throw Error(ErrorKind::Size, "composed dimension overflows");
    }
    return a * b;
}

template <typename F>
void for_each_term(const Recipe& r, F&& f) {
    auto visit_add_or_term = [&](const AddOrTerm& n) {
        if (auto* t = std::get_if<Term>(&n)) {
            f(*t);
        } else {
            for (const auto& t2 : std::get<Add>(n).terms) f(t2);
        }
    };
    if (auto* t = std::get_if<Term>(&r)) {
        f(*t);
    } else if (auto* a = std::get_if<Add>(&r)) {
        for (const auto& t2 : a->terms) f(t2);
    } else {
        for (const auto& c : std::get<Append>(r).children) visit_add_or_term(c);
    }
}

}  // namespace detail

/// Parses the ASCII recipe syntax (`pi`, `pibar`, `v`, integer factors, `+`, `(a,b,...)`).
/// Case-insensitive; whitespace is ignored. Throws ParseError with a byte offset.
inline Recipe parse_recipe(std::string_view text) {
    return detail::RecipeParser(text).parse();
}

/// Canonical text form; parse_recipe(render_recipe(r)) == r.
inline std::string render_recipe(const Recipe& recipe) {
    std::string out;
    if (auto* t = std::get_if<Term>(&recipe)) {
        detail::render_term(out, *t);
    } else if (auto* a = std::get_if<Add>(&recipe)) {
        detail::render_add(out, *a);
    } else {
        const auto& ap = std::get<Append>(recipe);
        out += '(';
        for (std::size_t i = 0; i < ap.children.size(); ++i) {
            if (i) out += ',';
            if (auto* t = std::get_if<Term>(&ap.children[i])) {
                detail::render_term(out, *t);
            } else {
                detail::render_add(out, std::get<Add>(ap.children[i]));
            }
        }
        out += ')';
    }
    return out;
}

inline bool uses(const Recipe& recipe, TermKind kind) {
    bool found = false;
    detail::for_each_term(recipe, [&](const Term& t) { found = found || t.kind == kind; });
    return found;
}

/// Length of the composed vector: factor * base length per term, sum over an append,
/// max over an add.
inline std::size_t recipe_dimension(const Recipe& recipe, const BaseDims& dims) {
    detail::for_each_term(recipe, [&](const Term& t) {
        if (dims.of(t.kind) == 0) {
            throw Error(ErrorKind::Configuration, "recipe uses '" + std::string(term_name(t.kind)) +
                                                      "' but its dimension is unknown");
        }
    });
    auto term_len = [&](const Term& t) { return detail::checked_mul(t.factor, dims.of(t.kind)); };
    auto add_len = [&](const Add& a) {
        std::size_t n = 0;
        for (const auto& t : a.terms) n = std::max(n, term_len(t));
        return n;
    };
    if (auto* t = std::get_if<Term>(&recipe)) return term_len(*t);
    if (auto* a = std::get_if<Add>(&recipe)) return add_len(*a);
    std::size_t total = 0;
    for (const auto& c : std::get<Append>(recipe).children) {
        const std::size_t n =
            std::holds_alternative<Term>(c) ? term_len(std::get<Term>(c)) : add_len(std::get<Add>(c));
        if (total > std::numeric_limits<std::size_t>::max() - n) {
            throw Error(ErrorKind::Size, "composed dimension overflows");
        }
        total += n;
    }
    return total;
}

}  // namespace ood
