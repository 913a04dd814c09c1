#include "alqa/common/jsonl.hpp"

#include <fstream>
#include <sstream>

#include "alqa/common/error.hpp"
#include "alqa/common/hash.hpp"

namespace alqa {

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const json& value) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << value.dump(2) << '\n';
}

void for_each_line(const std::filesystem::path& path,
                   const std::function<void(std::size_t, const std::string&)>& on_line) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    on_line(number, line);
  }
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::vector<json> rows;
  for_each_line(path, [&](std::size_t number, const std::string& line) {
    try {
      rows.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw DataError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  });
  return rows;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<json>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& row : rows) out << row.dump() << '\n';
}

void append_jsonl(const std::filesystem::path& path, const json& row) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app);
  if (!out) throw DataError("cannot append to " + path.string());
  out << row.dump() << '\n';
}

std::uint64_t file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return fnv1a(buf.str());
}

}  // namespace alqa
