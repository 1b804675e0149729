#include <charconv>
#include <fstream>
#include <sstream>

#include "cdlab/errors.hpp"
#include "cdlab/netcore.hpp"

namespace cdlab {

namespace {

void append_double(std::string& out, double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, ptr);
}

struct Token {
  std::string_view text;
  std::size_t column;  // 1-based
};

struct Line {
  std::string_view text;
  std::size_t number;  // 1-based
};

std::vector<Token> tokenize(std::string_view line) {
  std::vector<Token> tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    if (i >= line.size()) break;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    tokens.push_back({line.substr(start, i - start), start + 1});
  }
  return tokens;
}

class NetParser {
 public:
  explicit NetParser(std::string_view text) {
    std::size_t pos = 0, number = 1;
    while (pos < text.size()) {
      const std::size_t nl = text.find('\n', pos);
      const std::size_t end = nl == std::string_view::npos ? text.size() : nl;
      lines_.push_back({text.substr(pos, end - pos), number++});
      if (nl == std::string_view::npos) break;
      pos = nl + 1;
    }
    eof_line_ = number;
  }

  Network parse() {
    const Line& header = next_line("NETV1 header");
    const auto head = tokenize(header.text);
    if (head.empty() || head[0].text != "NETV1")
      throw ParseError(header.number, 1, "expected 'NETV1' header");
    if (head.size() != 2) throw ParseError(header.number, 1, "header must be 'NETV1 d=<int>'");
    const std::size_t d = key_int(header, head[1], "d");

    std::vector<Layer> layers;
    std::size_t fan_in = d;
    while (skip_blank()) {
      const Line& decl = next_line("LAYER declaration");
      const auto tok = tokenize(decl.text);
      if (tok.empty() || tok[0].text != "LAYER") throw ParseError(decl.number, 1, "expected 'LAYER'");
      if (tok.size() != 4) throw ParseError(decl.number, 1, "expected 'LAYER out=<int> in=<int> act=<name>'");
      const std::size_t out = key_int(decl, tok[1], "out");
      const std::size_t in = key_int(decl, tok[2], "in");
      if (in != fan_in)
        throw ParseError(decl.number, tok[2].column,
                         "in=" + std::to_string(in) + " does not chain with previous width " + std::to_string(fan_in));
      const std::string_view act_text = key_value(decl, tok[3], "act");
      Layer layer{Matrix(out, in), Vector(out), Activation::linear()};
      try {
        layer.activation = Activation::parse(act_text);
      } catch (const PreconditionError& e) {
        throw ParseError(decl.number, tok[3].column + 4, e.what());
      }
      for (std::size_t r = 0; r < out; ++r) read_row(layer.weights.row(r), "weight row");
      read_row(layer.bias, "bias row");
      layers.push_back(std::move(layer));
      fan_in = out;
    }
    if (layers.empty()) throw ParseError(eof_line_, 1, "network has no layers");
    try {
      return Network(d, std::move(layers));
    } catch (const PreconditionError& e) {
      throw ParseError(eof_line_, 1, e.what());
    }
  }

 private:
  // True if a non-blank line remains.
  bool skip_blank() {
    while (cursor_ < lines_.size() && tokenize(lines_[cursor_].text).empty()) ++cursor_;
    return cursor_ < lines_.size();
  }

  const Line& next_line(std::string_view what) {
    if (!skip_blank()) throw ParseError(eof_line_, 1, "unexpected end of input, expected " + std::string(what));
    return lines_[cursor_++];
  }

  std::string_view key_value(const Line& line, const Token& tok, std::string_view key) {
    if (tok.text.size() <= key.size() + 1 || tok.text.substr(0, key.size()) != key || tok.text[key.size()] != '=')
      throw ParseError(line.number, tok.column, "expected '" + std::string(key) + "=<value>'");
    return tok.text.substr(key.size() + 1);
  }

  std::size_t key_int(const Line& line, const Token& tok, std::string_view key) {
    const std::string_view v = key_value(line, tok, key);
    std::size_t out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size() || out == 0)
      throw ParseError(line.number, tok.column + key.size() + 1, "expected a positive integer for " + std::string(key));
    return out;
  }

  void read_row(std::span<double> dest, std::string_view what) {
    const Line& line = next_line(what);
    const auto tok = tokenize(line.text);
    if (tok.size() != dest.size())
      throw ParseError(line.number, tok.empty() ? 1 : tok.front().column,
                       std::string(what) + " has " + std::to_string(tok.size()) + " values, expected " +
                           std::to_string(dest.size()));
    for (std::size_t i = 0; i < tok.size(); ++i) {
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(tok[i].text.data(), tok[i].text.data() + tok[i].text.size(), v);
      if (ec != std::errc() || ptr != tok[i].text.data() + tok[i].text.size())
        throw ParseError(line.number, tok[i].column, "malformed number '" + std::string(tok[i].text) + "'");
      dest[i] = v;
    }
  }

  std::vector<Line> lines_;
  std::size_t cursor_ = 0;
  std::size_t eof_line_ = 1;
};

}  // namespace

std::string serialize(const Network& net) {
  std::string out = "NETV1 d=" + std::to_string(net.input_dim()) + "\n";
  for (const auto& layer : net.layers()) {
    out += "LAYER out=" + std::to_string(layer.weights.rows()) + " in=" + std::to_string(layer.weights.cols()) +
           " act=" + layer.activation.to_string() + "\n";
    for (std::size_t r = 0; r < layer.weights.rows(); ++r) {
      const auto row = layer.weights.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) {
        if (c) out += ' ';
        append_double(out, row[c]);
      }
      out += '\n';
    }
    for (std::size_t j = 0; j < layer.bias.size(); ++j) {
      if (j) out += ' ';
      append_double(out, layer.bias[j]);
    }
    out += '\n';
  }
  return out;
}

Network deserialize(std::string_view text) { return NetParser(text).parse(); }

Network load_network(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PreconditionError("cannot open network file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

void save_network(const std::filesystem::path& path, const Network& net) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PreconditionError("cannot write network file " + path.string());
  out << serialize(net);
}

}  // namespace cdlab
