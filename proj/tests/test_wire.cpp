#include <gtest/gtest.h>

#include <random>

#include "viva/wire.hpp"

namespace {

using namespace viva;
using namespace viva::gateway;
using nlohmann::json;

std::vector<std::uint8_t> frame_bytes(const std::string& header, const std::vector<std::uint8_t>& payload = {}) {
  std::vector<std::uint8_t> out;
  const auto n = static_cast<std::uint32_t>(header.size());
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(n >> s));
  out.insert(out.end(), header.begin(), header.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

ProtocolErrc command_error(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_command(bytes);
  } catch (const ProtocolError& e) {
    return e.code();
  }
  ADD_FAILURE() << "decoded without error";
  return ProtocolErrc::unexpected_message;
}

Image test_image(int w, int h, std::uint64_t seed) {
  Image img(w, h);
  std::mt19937_64 rng(seed);
  for (auto& b : img.storage()) b = static_cast<std::uint8_t>(rng());
  return img;
}

TEST(Wire, FramingLayout) {
  WireMessage m;
  m.header = {{"type", "x"}};
  m.payload = {1, 2, 3};
  const auto bytes = encode(m);
  const std::string text = R"({"payload_bytes":3,"type":"x"})";
  EXPECT_EQ(bytes, frame_bytes(text, {1, 2, 3}));
  const WireMessage back = decode(bytes);
  EXPECT_EQ(back.type(), "x");
  EXPECT_EQ(back.payload, m.payload);
}

TEST(Wire, CommandRoundTripsBothForms) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0), big(-1e6, 1e6);
  for (int i = 0; i < 2000; ++i) {
    CommandMessage c;
    if (i % 2 == 0) {
      c.command = dynamics::Stick{u(rng), u(rng), u(rng), u(rng)};
    } else {
      c.command = dynamics::AttitudeCommand{big(rng), big(rng), big(rng), big(rng)};
    }
    if (i % 3 != 0) c.tick_ack = static_cast<std::int64_t>(rng() >> 2);
    const CommandMessage back = decode_command(encode_command(c));
    ASSERT_EQ(back.command, c.command);
    ASSERT_EQ(back.tick_ack, c.tick_ack);
  }
}

TEST(Wire, StateRoundTripsBothEncodings) {
  for (Encoding e : {Encoding::rgb8, Encoding::png}) {
    StateMessage s;
    s.tick = 17;
    s.sim_time_s = 17.0 / 30.0;
    s.pos = {1.5, -2.25, 80.125};
    s.vel = {0.1, 0.2, -0.3};
    s.roll = 0.01;
    s.pitch = -0.02;
    s.yaw = 3.0;
    s.thrust = 2.4525;
    s.frame_id = 9;
    s.encoding = e;
    s.image = test_image(33, 21, 4);
    s.footprint_corners_src = std::array<geometry::Vec2, 4>{geometry::Vec2{0, 1}, {2, 3}, {4, 5}, {6, 7}};
    s.scale_factor = 1.25;
    s.coverage = 0.75;
    const auto bytes = encode_state(s);
    const StateMessage b = decode_state(decode(bytes));
    EXPECT_EQ(b.tick, s.tick);
    EXPECT_EQ(b.sim_time_s, s.sim_time_s);
    EXPECT_EQ(b.pos, s.pos);
    EXPECT_EQ(b.vel, s.vel);
    EXPECT_EQ(b.yaw, s.yaw);
    EXPECT_EQ(b.thrust, s.thrust);
    EXPECT_EQ(b.frame_id, 9);
    EXPECT_EQ(b.encoding, e);
    EXPECT_EQ(b.image, s.image);
    EXPECT_EQ(*b.footprint_corners_src, *s.footprint_corners_src);
    EXPECT_EQ(b.scale_factor, 1.25);
    EXPECT_EQ(b.coverage, 0.75);
    if (e == Encoding::rgb8) {
      EXPECT_EQ(decode(bytes).header["payload_bytes"], 33 * 21 * 3);
    }
  }
}

TEST(Wire, StatePayloadMismatchIsTyped) {
  StateMessage s;
  s.image = test_image(8, 4, 1);
  WireMessage m = make_state(s);
  m.payload.pop_back();
  try {
    decode_state(decode(encode(m)));
    FAIL();
  } catch (const ProtocolError& e) {
    EXPECT_EQ(e.code(), ProtocolErrc::payload_mismatch);
  }
  WireMessage c = make_command({dynamics::Stick{}, 0});
  EXPECT_THROW(decode_state(c), ProtocolError);
}

TEST(Wire, OverviewAndErrorMessages) {
  OverviewMessage o;
  o.tick = 5;
  o.src_width = 7680;
  o.src_height = 4320;
  o.image = test_image(24, 13, 2);
  o.footprint_corners_src = {geometry::Vec2{10, 20}, {30, 20}, {30, 40}, {10, 40}};
  const OverviewMessage b = decode_overview(decode(encode(make_overview(o))));
  EXPECT_EQ(b.tick, 5);
  EXPECT_EQ(b.src_width, 7680);
  EXPECT_EQ(b.image, o.image);
  EXPECT_EQ(b.footprint_corners_src, o.footprint_corners_src);

  const WireMessage err = decode(encode(make_error(ProtocolErrc::tick_mismatch, "late", 12)));
  EXPECT_EQ(err.type(), "error");
  EXPECT_EQ(err.header["code"], "tick_mismatch");
  EXPECT_EQ(err.header["tick"], 12);
  EXPECT_FALSE(err.header.contains("payload_bytes"));
}

TEST(Wire, TypedCommandErrors) {
  EXPECT_EQ(command_error({0, 0}), ProtocolErrc::truncated);
  EXPECT_EQ(command_error({0xFF, 0xFF, 0xFF, 0xFF}), ProtocolErrc::header_too_large);
  EXPECT_EQ(command_error(frame_bytes("{\"type\":")), ProtocolErrc::malformed_json);
  EXPECT_EQ(command_error(frame_bytes("[1,2]")), ProtocolErrc::not_an_object);
  EXPECT_EQ(command_error(frame_bytes("{\"stick\":[0,0,0,0]}")), ProtocolErrc::missing_type);
  EXPECT_EQ(command_error(frame_bytes("{\"type\":\"teleport\"}")), ProtocolErrc::unknown_type);
  EXPECT_EQ(command_error(frame_bytes("{\"type\":\"state\"}")), ProtocolErrc::unexpected_message);
  EXPECT_EQ(command_error(frame_bytes("{\"type\":\"command\",\"payload_bytes\":-1}")), ProtocolErrc::bad_payload_length);
  EXPECT_EQ(command_error(frame_bytes("{\"type\":\"command\",\"payload_bytes\":\"2\"}")), ProtocolErrc::bad_payload_length);
  EXPECT_EQ(command_error(frame_bytes("{\"type\":\"command\",\"payload_bytes\":4}", {1, 2})), ProtocolErrc::truncated);
  EXPECT_EQ(command_error(frame_bytes("{\"type\":\"command\",\"stick\":[0,0,0,0]}", {1})), ProtocolErrc::payload_mismatch);
  EXPECT_EQ(command_error(frame_bytes("{\"type\":\"command\",\"payload_bytes\":1,\"stick\":[0,0,0,0]}", {1})),
            ProtocolErrc::payload_mismatch);
  EXPECT_EQ(command_error(frame_bytes(
                R"({"type":"command","stick":[0,0,0,0],"attitude":{"roll":0,"pitch":0,"yaw":0,"thrust":1}})")),
            ProtocolErrc::both_forms);
  EXPECT_EQ(command_error(frame_bytes("{\"type\":\"command\"}")), ProtocolErrc::neither_form);
  EXPECT_EQ(command_error(frame_bytes("{\"type\":\"command\",\"stick\":[0,0,1.5,0]}")), ProtocolErrc::stick_range);
  EXPECT_EQ(command_error(frame_bytes("{\"type\":\"command\",\"stick\":[0,0,0]}")), ProtocolErrc::invalid_field);
  EXPECT_EQ(command_error(frame_bytes("{\"type\":\"command\",\"stick\":[0,0,\"a\",0]}")), ProtocolErrc::invalid_field);
  EXPECT_EQ(command_error(frame_bytes(R"({"type":"command","attitude":{"roll":0,"pitch":0,"yaw":0}})")),
            ProtocolErrc::invalid_field);
  EXPECT_EQ(command_error(frame_bytes(R"({"type":"command","attitude":[0,0,0,1]})")), ProtocolErrc::invalid_field);
  EXPECT_EQ(command_error(frame_bytes(R"({"type":"command","stick":[0,0,0,0],"tick_ack":-3})")),
            ProtocolErrc::invalid_field);
  EXPECT_EQ(command_error(frame_bytes(R"({"type":"command","stick":[0,0,0,0],"tick_ack":1.5})")),
            ProtocolErrc::invalid_field);
  EXPECT_EQ(command_error(frame_bytes("\xff\xfe{}")), ProtocolErrc::malformed_json);
  const auto ok = decode_command(frame_bytes(R"({"type":"command","stick":[0,0,0,0],"tick_ack":null})"));
  EXPECT_FALSE(ok.tick_ack);
}

// Every corruption of a valid message must end in a typed ProtocolError or a
// valid command, never a crash or another exception type.
void expect_typed(const std::vector<std::uint8_t>& bytes) {
  try {
    const CommandMessage c = decode_command(bytes);
    if (const auto* s = std::get_if<dynamics::Stick>(&c.command)) {
      for (double v : {s->x, s->y, s->z, s->r}) ASSERT_TRUE(v >= -1.0 && v <= 1.0);
    }
  } catch (const ProtocolError&) {
  }
}

TEST(WireFuzz, TruncationsAreTyped) {
  CommandMessage c{dynamics::Stick{0.25, -0.5, 0.75, -1.0}, 42};
  const auto bytes = encode_command(c);
  for (std::size_t n = 0; n < bytes.size(); ++n) {
    try {
      decode_command({bytes.data(), n});
      FAIL() << "prefix " << n << " accepted";
    } catch (const ProtocolError& e) {
      EXPECT_EQ(e.code(), ProtocolErrc::truncated) << n;
    }
  }
}

TEST(WireFuzz, RandomMutationsAreTyped) {
  const std::vector<std::vector<std::uint8_t>> seeds = {
      encode_command({dynamics::Stick{0.25, -0.5, 0.75, -1.0}, 42}),
      encode_command({dynamics::AttitudeCommand{0.1, -0.2, 3.0, 2.5}, std::nullopt}),
  };
  std::mt19937_64 rng(77);
  for (int i = 0; i < 20000; ++i) {
    std::vector<std::uint8_t> b = seeds[static_cast<std::size_t>(i) % seeds.size()];
    const int edits = 1 + static_cast<int>(rng() % 4);
    for (int k = 0; k < edits; ++k) {
      const std::size_t at = rng() % b.size();
      switch (rng() % 4) {
        case 0: b[at] = static_cast<std::uint8_t>(rng()); break;
        case 1: b.erase(b.begin() + static_cast<std::ptrdiff_t>(at)); break;
        case 2: b.insert(b.begin() + static_cast<std::ptrdiff_t>(at), static_cast<std::uint8_t>(rng())); break;
        default: b[at] ^= static_cast<std::uint8_t>(1u << (rng() % 8)); break;
      }
      if (b.empty()) b.push_back(0);
    }
    expect_typed(b);
  }
  // Random garbage, including plausible length prefixes.
  for (int i = 0; i < 5000; ++i) {
    std::vector<std::uint8_t> b(rng() % 64);
    for (auto& x : b) x = static_cast<std::uint8_t>(rng());
    if (b.size() >= 4 && i % 2 == 0) {
      b[0] = b[1] = b[2] = 0;
      b[3] = static_cast<std::uint8_t>(b.size() - 4);
    }
    expect_typed(b);
  }
}

TEST(WireFuzz, StateMutationsAreTyped) {
  StateMessage s;
  s.image = test_image(6, 4, 3);
  s.footprint_corners_src = std::array<geometry::Vec2, 4>{};
  const auto base = encode_state(s);
  std::mt19937_64 rng(5);
  for (int i = 0; i < 5000; ++i) {
    auto b = base;
    b[rng() % b.size()] = static_cast<std::uint8_t>(rng());
    try {
      decode_state(decode(b));
    } catch (const ProtocolError&) {
    }
  }
}

TEST(StreamDecoder, SplitsConcatenatedMessagesAcrossChunks) {
  std::vector<std::uint8_t> stream;
  std::vector<CommandMessage> sent;
  for (int i = 0; i < 50; ++i) {
    CommandMessage c{dynamics::Stick{i / 100.0, 0, 0, 0}, i};
    sent.push_back(c);
    const auto b = encode_command(c);
    stream.insert(stream.end(), b.begin(), b.end());
  }
  std::mt19937_64 rng(3);
  StreamDecoder d;
  std::vector<CommandMessage> got;
  std::size_t at = 0;
  while (at < stream.size()) {
    const std::size_t n = std::min<std::size_t>(1 + rng() % 40, stream.size() - at);
    d.feed({stream.data() + at, n});
    at += n;
    while (auto m = d.next()) got.push_back(decode_command(*m));
  }
  ASSERT_EQ(got.size(), sent.size());
  for (std::size_t i = 0; i < sent.size(); ++i) EXPECT_EQ(got[i].tick_ack, sent[i].tick_ack);
  EXPECT_EQ(d.buffered(), 0u);
}

TEST(StreamDecoder, BadHeaderIsSkippedAndStreamContinues) {
  StreamDecoder d;
  const auto bad = frame_bytes("{nope");
  const auto good = encode_command({dynamics::Stick{}, 7});
  d.feed(bad);
  d.feed(good);
  EXPECT_THROW(d.next(), ProtocolError);
  const auto m = d.next();
  ASSERT_TRUE(m);
  EXPECT_EQ(decode_command(*m).tick_ack, 7);
  EXPECT_FALSE(d.next());
}

}  // namespace
