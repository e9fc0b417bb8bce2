#include "pocus/data/manifest.hpp"

#include <charconv>
#include <map>
#include <set>
#include <sstream>

#include "pocus/error.hpp"
#include "pocus/util.hpp"

namespace pocus::data {

namespace {

constexpr std::string_view kRequired[] = {"id", "path", "label", "probe", "kind", "fps"};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void row_error(std::size_t row, const std::string& what) {
  throw ValidationError("manifest row " + std::to_string(row) + ": " + what);
}

int parse_int(const std::string& s, std::size_t row, std::string_view column) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    row_error(row, "column '" + std::string(column) + "' is not an integer: '" + s + "'");
  }
  return v;
}

double parse_double(const std::string& s, std::size_t row, std::string_view column) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    row_error(row, "column '" + std::string(column) + "' is not a number: '" + s + "'");
  }
  return v;
}

}  // namespace

std::vector<RecordingMeta> parse_manifest(std::string_view csv_text,
                                          const std::filesystem::path& base_dir) {
  const auto rows = parse_csv(csv_text);
  if (rows.empty()) throw SchemaError("manifest is empty (no header row)");
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < rows[0].size(); ++i) col[trim(rows[0][i])] = i;
  for (auto name : kRequired) {
    if (!col.count(std::string(name))) {
      throw SchemaError("manifest is missing required column '" + std::string(name) + "'");
    }
  }
  auto field = [&](const CsvRow& r, std::string_view name) -> std::string {
    auto it = col.find(std::string(name));
    if (it == col.end() || it->second >= r.size()) return {};
    return trim(r[it->second]);
  };

  std::vector<RecordingMeta> out;
  std::set<std::string> seen;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const CsvRow& r = rows[i];
    const std::size_t row = i;  // 1-based data row
    RecordingMeta m;
    m.id = field(r, "id");
    if (m.id.empty()) row_error(row, "empty id");
    if (!seen.insert(m.id).second) row_error(row, "duplicate id '" + m.id + "'");

    const std::string path = field(r, "path");
    if (path.empty()) row_error(row, "empty path");
    m.path = std::filesystem::path(path);
    if (m.path.is_relative() && !base_dir.empty()) m.path = base_dir / m.path;

    const std::string label = field(r, "label");
    const auto parsed_label = parse_label(label);
    if (!parsed_label) row_error(row, "unknown label '" + label + "'");
    m.label = *parsed_label;

    const std::string probe = field(r, "probe");
    const auto parsed_probe = parse_probe(probe);
    if (!parsed_probe) row_error(row, "unknown probe '" + probe + "'");
    m.probe = *parsed_probe;

    const std::string kind = field(r, "kind");
    const auto parsed_kind = parse_media_kind(kind);
    if (!parsed_kind) row_error(row, "unknown kind '" + kind + "'");
    m.kind = *parsed_kind;

    m.source = field(r, "source");
    m.notes = field(r, "notes");

    const std::string fps = field(r, "fps");
    if (m.kind == MediaKind::kVideo) {
      if (fps.empty()) row_error(row, "video '" + m.id + "' has no fps");
      m.fps = parse_double(fps, row, "fps");
      if (!(*m.fps > 0)) row_error(row, "fps must be positive");
    } else if (!fps.empty()) {
      row_error(row, "image '" + m.id + "' must not declare fps");
    }

    const std::string cx = field(r, "crop_x"), cy = field(r, "crop_y"), cw = field(r, "crop_w"),
                      ch = field(r, "crop_h");
    const int filled = !cx.empty() + !cy.empty() + !cw.empty() + !ch.empty();
    if (filled == 4) {
      CropWindow w{parse_int(cx, row, "crop_x"), parse_int(cy, row, "crop_y"),
                   parse_int(cw, row, "crop_w"), parse_int(ch, row, "crop_h")};
      if (w.x < 0 || w.y < 0 || w.w <= 0 || w.h <= 0) row_error(row, "crop window out of range");
      if (w.w != w.h) row_error(row, "crop window must be square");
      m.crop = w;
    } else if (filled != 0) {
      row_error(row, "crop window needs all of crop_x, crop_y, crop_w, crop_h");
    }
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<RecordingMeta> load_manifest(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("manifest not found: " + path.string());
  return parse_manifest(read_file(path), path.parent_path());
}

std::string format_manifest(const std::vector<RecordingMeta>& records) {
  std::ostringstream os;
  os << kManifestHeader << '\n';
  for (const auto& m : records) {
    os << csv_escape(m.id) << ',' << csv_escape(m.path.string()) << ',' << to_string(m.label) << ','
       << to_string(m.probe) << ',' << to_string(m.kind) << ',' << csv_escape(m.source) << ','
       << (m.fps ? format_double(*m.fps) : "") << ',';
    if (m.crop) {
      os << m.crop->x << ',' << m.crop->y << ',' << m.crop->w << ',' << m.crop->h << ',';
    } else {
      os << ",,,,";
    }
    os << csv_escape(m.notes) << '\n';
  }
  return os.str();
}

}  // namespace pocus::data
