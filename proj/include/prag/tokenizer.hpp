#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "prag/common.hpp"

namespace prag {

// Byte-level tokenizer. With vocab_size >= 257 every byte maps to a single
// token (byte value + 1, id 0 reserved for PAD) and detokenize round-trips
// byte-exactly. Smaller vocabularies fall back to a fixed-width base-B digit
// encoding over the non-PAD ids, B = vocab_size - 1; the round trip still
// holds for any vocab_size >= 3. vocab_size == 2 has a single non-PAD symbol
// and cannot encode bytes injectively; every byte maps to that symbol and
// detokenize yields '?'.

inline std::size_t digits_per_byte(std::uint32_t vocab_size) {
    std::uint64_t base = vocab_size - 1;
    std::size_t digits = 0;
    std::uint64_t reach = 1;
    while (reach < 256) {
        reach *= base;
        ++digits;
    }
    return digits;
}

inline std::vector<TokenId> tokenize(std::string_view text, std::uint32_t vocab_size = kByteVocabSize) {
    if (vocab_size < 2) throw ConfigError("tokenize: vocab_size must be >= 2");
    std::vector<TokenId> out;
    if (vocab_size >= kByteVocabSize) {
        out.reserve(text.size());
        for (unsigned char c : text) out.push_back(static_cast<TokenId>(c) + 1);
        return out;
    }
    if (vocab_size == 2) {
        out.assign(text.size(), 1);
        return out;
    }
    std::uint32_t base = vocab_size - 1;
    std::size_t width = digits_per_byte(vocab_size);
    out.reserve(text.size() * width);
    for (unsigned char c : text) {
        std::uint32_t v = c;
        std::vector<TokenId> digits(width, 1);
        for (std::size_t i = width; i-- > 0;) {
            digits[i] = (v % base) + 1;
            v /= base;
        }
        out.insert(out.end(), digits.begin(), digits.end());
    }
    return out;
}

inline std::string detokenize(const std::vector<TokenId>& tokens, std::uint32_t vocab_size = kByteVocabSize) {
    if (vocab_size < 2) throw ConfigError("detokenize: vocab_size must be >= 2");
    std::string out;
    if (vocab_size >= kByteVocabSize) {
        out.reserve(tokens.size());
        for (TokenId t : tokens) {
            if (t == kPadToken) continue;
            out.push_back(static_cast<char>(t - 1));
        }
        return out;
    }
    if (vocab_size == 2) {
        out.assign(tokens.size(), '?');
        return out;
    }
    std::uint32_t base = vocab_size - 1;
    std::size_t width = digits_per_byte(vocab_size);
    std::vector<TokenId> buf;
    for (TokenId t : tokens) {
        if (t == kPadToken) continue;
        buf.push_back(t);
        if (buf.size() == width) {
            std::uint32_t v = 0;
            for (TokenId d : buf) v = v * base + (d - 1);
            out.push_back(static_cast<char>(v & 0xff));
            buf.clear();
        }
    }
    return out;
}

}  // namespace prag
