#pragma once

#include <string_view>

// Copies of resources/*.{tsv,txt} compiled into the library.
namespace mguard::resources {

std::string_view contractions_tsv();
std::string_view emoji_aliases_tsv();
std::string_view stopwords_txt();

}  // namespace mguard::resources
