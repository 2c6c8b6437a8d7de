#include "geom/render.hpp"

#include <sstream>
#include <vector>

namespace geom {

namespace {

constexpr int kMaxByteRowBits = 8;

std::string extent(const BlockId& id) { return hex(id.base()) + "-" + hex(id.end() - 1); }

Annotation annotate(const BlockTree& tree, const Node& n) {
  Annotation a;
  if (tree.kind() == TreeKind::real) {
    a.map = n.map;
  } else {
    a.full = n.full;
    a.backing = n.backing;
  }
  return a;
}

std::string byte_row(const BlockTree& tree) {
  const auto& cfg = tree.config();
  if (cfg.height_bits > kMaxByteRowBits) return {};
  std::string row(cfg.space_size(), '-');
  const char mark = tree.kind() == TreeKind::real ? 'x' : 'b';
  for (const auto& leaf : tree.leaves()) {
    for (Address a = leaf.base(); a < leaf.end(); ++a) row[a] = mark;
  }
  return row;
}

}  // namespace

RenderedTree describe(const BlockTree& tree) {
  RenderedTree out;
  out.config = tree.config();
  out.kind = tree.kind();
  for (int l = tree.config().height_bits; l >= tree.config().min_level; --l) {
    for (const auto& [idx, node] : tree.level(l)) {
      out.nodes[{l, idx}] = RenderedNode{node.leaf, annotate(tree, node)};
    }
  }
  for (const auto& n : tree.niches()) out.niches.insert(n);
  out.bytes = byte_row(tree);
  return out;
}

std::string render_tree(const BlockTree& tree) {
  const auto& cfg = tree.config();
  std::ostringstream os;
  os << "tree n=" << cfg.height_bits << " m=" << cfg.min_level << " w=" << cfg.counter_bits
     << (tree.kind() == TreeKind::real ? " real" : " virtual") << "\n";

  std::vector<std::map<Address, std::string>> rows(static_cast<std::size_t>(cfg.height_bits) + 1);
  for (int l = cfg.height_bits; l >= cfg.min_level; --l) {
    for (const auto& [idx, node] : tree.level(l)) {
      const BlockId id{l, idx};
      std::ostringstream cell;
      cell << "(" << extent(id) << (node.leaf ? " leaf" : " int");
      if (tree.kind() == TreeKind::real) {
        cell << " [";
        for (std::size_t i = 0; i < node.map.size(); ++i) cell << (i ? "," : "") << node.map[i];
        cell << "]";
      } else {
        cell << " full=" << (node.full ? 1 : 0);
        if (node.backing) cell << " back=" << hex(*node.backing);
      }
      cell << ")";
      rows[static_cast<std::size_t>(l)][id.base()] = cell.str();
    }
  }
  for (const auto& n : tree.niches()) {
    rows[static_cast<std::size_t>(n.level)][n.base()] = "- " + extent(n) + " -";
  }
  for (int l = cfg.height_bits; l >= cfg.min_level; --l) {
    const auto& row = rows[static_cast<std::size_t>(l)];
    if (row.empty()) continue;
    os << "L" << l;
    for (const auto& [base, cell] : row) os << " " << cell;
    os << "\n";
  }
  if (auto bytes = byte_row(tree); !bytes.empty()) os << "bytes |" << bytes << "|\n";
  return os.str();
}

namespace {

[[noreturn]] void bad(const std::string& what) { throw GeomError(Errc::parse, "rendering: " + what); }

Address parse_hex(const std::string& s) {
  std::size_t pos = 0;
  Address v = 0;
  try {
    v = std::stoull(s, &pos, 16);
  } catch (const std::exception&) {
    bad("bad address '" + s + "'");
  }
  if (pos != s.size()) bad("bad address '" + s + "'");
  return v;
}

BlockId parse_extent(const std::string& s, int level) {
  auto dash = s.find('-');
  if (dash == std::string::npos) bad("bad extent '" + s + "'");
  const Address lo = parse_hex(s.substr(0, dash));
  const Address hi = parse_hex(s.substr(dash + 1));
  const BlockId id{level, lo >> level};
  if (id.base() != lo || id.end() - 1 != hi) bad("extent '" + s + "' does not match level");
  return id;
}

}  // namespace

RenderedTree parse_rendering(std::string_view text) {
  RenderedTree out;
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line)) bad("empty");
  {
    std::istringstream hs(line);
    std::string tag, n, m, w, kind;
    hs >> tag >> n >> m >> w >> kind;
    if (tag != "tree" || n.rfind("n=", 0) != 0 || m.rfind("m=", 0) != 0 || w.rfind("w=", 0) != 0) {
      bad("bad header");
    }
    out.config.height_bits = std::stoi(n.substr(2));
    out.config.min_level = std::stoi(m.substr(2));
    out.config.counter_bits = std::stoi(w.substr(2));
    if (kind == "real") {
      out.kind = TreeKind::real;
    } else if (kind == "virtual") {
      out.kind = TreeKind::virtual_space;
    } else {
      bad("bad tree kind");
    }
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.rfind("bytes |", 0) == 0) {
      if (line.size() < 8 || line.back() != '|') bad("bad byte row");
      out.bytes = line.substr(7, line.size() - 8);
      continue;
    }
    if (line[0] != 'L') bad("unexpected line '" + line + "'");
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    const int level = std::stoi(tok.substr(1));
    while (ls >> tok) {
      if (tok == "-") {
        std::string ext, close;
        ls >> ext >> close;
        if (close != "-") bad("unterminated niche");
        out.niches.insert(parse_extent(ext, level));
        continue;
      }
      if (tok.front() != '(') bad("unexpected token '" + tok + "'");
      const BlockId id = parse_extent(tok.substr(1), level);
      RenderedNode node;
      std::string kind;
      ls >> kind;
      bool closed = false;
      if (!kind.empty() && kind.back() == ')') {
        kind.pop_back();
        closed = true;
      }
      if (kind != "leaf" && kind != "int") bad("bad node kind");
      node.leaf = kind == "leaf";
      while (!closed && ls >> tok) {
        if (tok.back() == ')') {
          tok.pop_back();
          closed = true;
        }
        if (tok.rfind("[", 0) == 0) {
          if (tok.back() != ']') bad("bad niche map");
          std::string body = tok.substr(1, tok.size() - 2);
          std::istringstream ms(body);
          for (std::string c; std::getline(ms, c, ',');) {
            node.annotation.map.push_back(static_cast<std::uint32_t>(std::stoul(c)));
          }
        } else if (tok.rfind("full=", 0) == 0) {
          node.annotation.full = tok.substr(5) == "1";
        } else if (tok.rfind("back=", 0) == 0) {
          node.annotation.backing = parse_hex(tok.substr(5));
        } else {
          bad("bad annotation '" + tok + "'");
        }
      }
      if (!closed) bad("unterminated node");
      out.nodes[id] = std::move(node);
    }
  }
  return out;
}

}  // namespace geom
