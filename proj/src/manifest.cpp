#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "secap/data.hpp"
#include "secap/errors.hpp"

namespace secap {

namespace {

constexpr std::string_view kHeader = "#secap-manifest v1";

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string_view::npos ? tab : tab - start));
    if (tab == std::string_view::npos) return out;
    start = tab + 1;
  }
}

template <class Int>
Int parse_int(std::string_view s, std::string_view field, std::size_t line_no) {
  Int v{};
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size() || s.empty())
    throw ParseError("manifest line " + std::to_string(line_no) + ": bad " + std::string(field) +
                         " '" + std::string(s) + "'",
                     0);
  return v;
}

std::vector<SampleRecord> with_prefix(const Manifest& m, std::string_view prefix) {
  std::vector<SampleRecord> out;
  for (const auto& r : m.records)
    if (r.path.compare(0, prefix.size(), prefix) == 0) out.push_back(r);
  return out;
}

}  // namespace

std::string_view to_string(View v) {
  switch (v) {
    case View::Aerial: return "aerial";
    case View::GroundFrontal: return "ground-frontal";
    case View::GroundOblique: return "ground-oblique";
  }
  return "?";
}

View parse_view(std::string_view s) {
  if (s == "aerial") return View::Aerial;
  if (s == "ground-frontal" || s == "ground") return View::GroundFrontal;
  if (s == "ground-oblique") return View::GroundOblique;
  throw ParseError("unknown view '" + std::string(s) + "'", 0);
}

std::int64_t view_label(View v, std::size_t num_views) {
  if (v == View::Aerial) return 0;
  if (v == View::GroundOblique && num_views >= 3) return 2;
  return 1;
}

void Manifest::normalize() {
  std::sort(records.begin(), records.end(),
            [](const SampleRecord& a, const SampleRecord& b) { return a.path < b.path; });
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].identity < -1)
      throw ContractError("record " + records[i].path + " has identity " +
                          std::to_string(records[i].identity) + " < -1");
    if (i > 0 && records[i].path == records[i - 1].path)
      throw ContractError("duplicate manifest path " + records[i].path);
  }
}

void write_manifest(std::ostream& out, const Manifest& manifest) {
  out << kHeader << '\n';
  out << "#name=" << manifest.name << '\n';
  out << "#num_views=" << manifest.num_views << '\n';
  out << "#image=" << manifest.channels << 'x' << manifest.height << 'x' << manifest.width << '\n';
  for (const auto& r : manifest.records)
    out << r.path << '\t' << r.identity << '\t' << r.camera << '\t' << to_string(r.view) << '\t'
        << r.frame << '\n';
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  write_manifest(out, manifest);
  if (!out) throw IoError("error writing manifest " + path.string());
}

Manifest read_manifest(std::istream& in) {
  Manifest m;
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line) || line != kHeader)
    throw ParseError("missing '" + std::string(kHeader) + "' header", 0);
  ++line_no;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(1, eq - 1);
      const std::string value = line.substr(eq + 1);
      if (key == "name") {
        m.name = value;
      } else if (key == "num_views") {
        m.num_views = parse_int<std::size_t>(value, "num_views", line_no);
      } else if (key == "image") {
        std::size_t dims[3];
        std::string_view rest = value;
        for (int i = 0; i < 3; ++i) {
          const auto x = rest.find('x');
          dims[i] = parse_int<std::size_t>(rest.substr(0, x), "image size", line_no);
          if (i < 2 && x == std::string_view::npos)
            throw ParseError("manifest line " + std::to_string(line_no) + ": image size must be CxHxW", 0);
          rest = x == std::string_view::npos ? std::string_view{} : rest.substr(x + 1);
        }
        m.channels = dims[0];
        m.height = dims[1];
        m.width = dims[2];
      }
      continue;
    }
    const auto f = split_tabs(line);
    if (f.size() != 5)
      throw ParseError("manifest line " + std::to_string(line_no) + ": expected 5 tab-separated fields, got " +
                           std::to_string(f.size()),
                       0);
    SampleRecord r;
    r.path = std::string(f[0]);
    r.identity = parse_int<std::int64_t>(f[1], "identity", line_no);
    r.camera = parse_int<int>(f[2], "camera", line_no);
    r.view = parse_view(f[3]);
    r.frame = parse_int<std::int64_t>(f[4], "frame", line_no);
    m.records.push_back(std::move(r));
  }
  m.normalize();
  return m;
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read manifest " + path.string());
  return read_manifest(in);
}

std::vector<SampleRecord> train_records(const Manifest& manifest) { return with_prefix(manifest, "train/"); }
std::vector<SampleRecord> test_records(const Manifest& manifest) { return with_prefix(manifest, "test/"); }

ImageName parse_image_name(std::string_view full) {
  const auto slash = full.find_last_of('/');
  const std::size_t base = slash == std::string_view::npos ? 0 : slash + 1;
  std::size_t pos = base;
  auto fail = [&](const std::string& what) -> ParseError {
    return ParseError("bad image name '" + std::string(full) + "': " + what,
                      pos);
  };
  auto digits = [&](std::string_view field) {
    const std::size_t start = pos;
    while (pos < full.size() && full[pos] >= '0' && full[pos] <= '9') ++pos;
    if (pos == start) throw fail("expected digits for " + std::string(field));
    std::int64_t v = 0;
    const auto [end, ec] = std::from_chars(full.data() + start, full.data() + pos, v);
    if (ec != std::errc()) throw fail(std::string(field) + " out of range");
    return v;
  };
  auto expect = [&](char c) {
    if (pos >= full.size() || full[pos] != c) throw fail(std::string("expected '") + c + "'");
    ++pos;
  };

  ImageName out;
  bool negative = false;
  if (pos < full.size() && full[pos] == '-') {
    negative = true;
    ++pos;
  }
  out.identity = digits("identity");
  if (negative) out.identity = -out.identity;
  expect('_');
  expect('C');
  out.camera = static_cast<int>(digits("camera"));
  expect('_');
  out.frame = digits("frame");
  expect('.');
  if (pos >= full.size()) throw fail("missing extension");
  return out;
}

std::string format_image_name(const ImageName& name, std::string_view ext) {
  char buf[96];
  if (name.identity < 0)
    std::snprintf(buf, sizeof buf, "-%03lld_C%02d_%06lld", static_cast<long long>(-name.identity), name.camera,
                  static_cast<long long>(name.frame));
  else
    std::snprintf(buf, sizeof buf, "%04lld_C%02d_%06lld", static_cast<long long>(name.identity), name.camera,
                  static_cast<long long>(name.frame));
  return std::string(buf) + "." + std::string(ext);
}

std::string_view to_string(Protocol p) {
  switch (p) {
    case Protocol::AerialToGround: return "A->G";
    case Protocol::GroundToAerial: return "G->A";
    case Protocol::GroundToAerialGround: return "G->A+G";
  }
  return "?";
}

Protocol parse_protocol(std::string_view s) {
  if (s == "a2g") return Protocol::AerialToGround;
  if (s == "g2a") return Protocol::GroundToAerial;
  if (s == "g2ag") return Protocol::GroundToAerialGround;
  throw ConfigError("unknown protocol '" + std::string(s) + "' (expected a2g, g2a, g2ag)");
}

ProtocolSplit build_protocol(const std::vector<SampleRecord>& test, Protocol protocol,
                             const std::vector<SampleRecord>& designated_queries, const ViewMap& view_map) {
  const CoarseView query_view =
      protocol == Protocol::AerialToGround ? CoarseView::Aerial : CoarseView::Ground;
  auto in_gallery_view = [&](View v) {
    if (protocol == Protocol::GroundToAerialGround) return true;
    return view_map(v) != query_view;
  };

  ProtocolSplit split;
  split.protocol = protocol;
  std::unordered_set<std::string> query_paths;
  for (const auto& q : designated_queries)
    if (!q.is_distractor() && view_map(q.view) == query_view) query_paths.insert(q.path);

  std::set<std::int64_t> gallery_ids;
  std::set<CoarseView> gallery_views;
  for (const auto& r : test) {
    if (!in_gallery_view(r.view) || query_paths.count(r.path)) continue;
    split.gallery.push_back(r);
    gallery_views.insert(view_map(r.view));
    if (!r.is_distractor()) gallery_ids.insert(r.identity);
  }
  for (const auto& r : test)
    if (query_paths.count(r.path) && gallery_ids.count(r.identity)) split.query.push_back(r);

  if (split.query.empty())
    throw ProtocolError(std::string(to_string(protocol)) + ": no query image has a gallery match");
  if (split.gallery.empty()) throw ProtocolError(std::string(to_string(protocol)) + ": empty gallery");
  return split;
}

}  // namespace secap
