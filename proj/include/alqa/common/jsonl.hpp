#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

namespace alqa {

using json = nlohmann::json;

json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const json& value);

// Calls `on_line` for every non-blank line; the callback receives the 1-based line number.
void for_each_line(const std::filesystem::path& path,
                   const std::function<void(std::size_t, const std::string&)>& on_line);

std::vector<json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<json>& rows);
void append_jsonl(const std::filesystem::path& path, const json& row);

std::uint64_t file_hash(const std::filesystem::path& path);

}  // namespace alqa
