#include <gtest/gtest.h>

#include <thread>

#include "pader/transport.hpp"
#include "support.hpp"

namespace pader {
namespace {

using pader::testing::cached_keys;

std::vector<std::unique_ptr<Channel>> all_channels() {
  std::vector<std::unique_ptr<Channel>> out;
  out.push_back(std::make_unique<LoopbackChannel>());
  out.push_back(SocketChannel::unix_pair());
  out.push_back(SocketChannel::tcp_loopback());
  return out;
}

TEST(Frames, CipherFrameCostsFixedWidthPlusHeader) {
  const auto& kp = cached_keys(2048);
  Rng rng(1);
  LoopbackChannel ch;
  ch.send(Party::A, wire::cipher(kp.pub, paillier::encrypt(kp.pub, 3, rng)));
  EXPECT_EQ(ch.meters().a_to_b.bytes, 512u + kFrameHeaderBytes);
  EXPECT_EQ(ch.meters().a_to_b.units, 1u);
  auto back = wire::read_ciphers(kp.pub, ch.recv(Party::B));
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(paillier::decrypt(kp.sec, back[0]), 3);
}

TEST(Frames, EmptyControlFrameIsHeaderOnly) {
  LoopbackChannel ch;
  ch.send(Party::B, wire::control(""));
  EXPECT_EQ(ch.meters().b_to_a.bytes, kFrameHeaderBytes);
  EXPECT_EQ(ch.meters().b_to_a.units, 0u);
  EXPECT_EQ(wire::read_control(ch.recv(Party::A)), "");
}

TEST(Frames, BatchAndPlainPayloads) {
  const auto& kp = cached_keys(512);
  Rng rng(2);
  std::vector<paillier::Ciphertext> cs;
  for (int i = 0; i < 5; ++i) cs.push_back(paillier::encrypt(kp.pub, i, rng));
  Frame batch = wire::cipher_batch(kp.pub, cs);
  EXPECT_EQ(batch.payload.size(), 4 + 5 * 128u);
  EXPECT_EQ(wire::units(batch), 5u);
  EXPECT_EQ(wire::read_ciphers(kp.pub, batch), cs);

  std::vector<BigInt> vals{0, 1, 255, 256, pow2(300) + 7};
  Frame plain = wire::plain(vals);
  // Lengths 0, 1, 1, 2, 38 bytes plus a 4-byte prefix each.
  EXPECT_EQ(plain.payload.size(), 5 * 4 + 0 + 1 + 1 + 2 + 38u);
  EXPECT_EQ(wire::units(plain), 5u);
  EXPECT_EQ(wire::read_plain(plain), vals);
  EXPECT_THROW(wire::read_plain(batch), ProtocolError);
  EXPECT_THROW(wire::read_ciphers(kp.pub, plain), ProtocolError);
}

TEST(Frames, MalformedInputRejected) {
  std::vector<std::uint8_t> bad_type{9, 0, 0, 0, 0};
  EXPECT_THROW(wire::decode_frame(bad_type), TransportError);
  std::vector<std::uint8_t> truncated{3, 0, 0, 0, 4, 1};
  EXPECT_THROW(wire::decode_frame(truncated), TransportError);
  Frame p{MessageType::Plain, {0, 0, 0, 9, 1}};
  EXPECT_THROW(wire::read_plain(p), TransportError);
}

TEST(Channels, EchoPreservesPayloadAndOrder) {
  for (auto& ch : all_channels()) {
    std::vector<Frame> sent;
    for (int i = 0; i < 20; ++i) {
      Frame f{MessageType::Control, std::vector<std::uint8_t>(static_cast<std::size_t>(i * 37), static_cast<std::uint8_t>(i))};
      ch->send(Party::A, f);
      sent.push_back(f);
    }
    for (int i = 0; i < 20; ++i) {
      Frame got = ch->recv(Party::B);
      ch->send(Party::B, got);
    }
    for (int i = 0; i < 20; ++i) EXPECT_EQ(ch->recv(Party::A), sent[static_cast<std::size_t>(i)]);
    auto m = ch->meters();
    EXPECT_EQ(m.a_to_b.bytes, m.b_to_a.bytes);
    EXPECT_EQ(m.a_to_b.messages, 20u);
  }
}

TEST(Channels, LargeFramesFromOneThreadDoNotDeadlock) {
  for (auto& ch : all_channels()) {
    Frame big{MessageType::Control, std::vector<std::uint8_t>(4 << 20, 0xab)};
    ch->send(Party::A, big);
    ch->send(Party::A, big);
    EXPECT_EQ(ch->recv(Party::B), big);
    EXPECT_EQ(ch->recv(Party::B), big);
  }
}

TEST(Channels, EndpointsOnDifferentThreads) {
  for (auto& ch : all_channels()) {
    std::thread peer([&] {
      for (int i = 0; i < 50; ++i) {
        Frame f = ch->recv(Party::B);
        f.payload.push_back(1);
        ch->send(Party::B, f);
      }
    });
    Frame f{MessageType::Control, {}};
    for (int i = 0; i < 50; ++i) {
      ch->send(Party::A, f);
      f = ch->recv(Party::A);
    }
    peer.join();
    EXPECT_EQ(f.payload.size(), 50u);
    EXPECT_EQ(ch->meters().total().transmissions, 100u);
  }
}

TEST(Channels, ClosedChannelRaises) {
  for (auto& ch : all_channels()) {
    ch->close();
    EXPECT_THROW(ch->send(Party::A, wire::control("x")), TransportError);
    EXPECT_THROW(ch->recv(Party::B), TransportError);
  }
}

TEST(Channels, EmptyReceiveTimesOut) {
  LoopbackChannel ch(std::chrono::milliseconds(10));
  EXPECT_THROW(ch.recv(Party::A), TransportError);
  auto sock = SocketChannel::unix_pair(std::chrono::milliseconds(30));
  EXPECT_THROW(sock->recv(Party::B), TransportError);
}

TEST(Meters, TransmissionsCountDirectionChanges) {
  LoopbackChannel ch;
  ch.send(Party::A, wire::control("a"));
  ch.send(Party::A, wire::control("b"));
  ch.send(Party::B, wire::control("c"));
  ch.send(Party::A, wire::control("d"));
  auto m = ch.meters();
  EXPECT_EQ(m.a_to_b.transmissions, 2u);
  EXPECT_EQ(m.b_to_a.transmissions, 1u);
  EXPECT_EQ(m.total().messages, 4u);
  ch.reset_meters();
  EXPECT_EQ(ch.meters().total().bytes, 0u);
}

TEST(Meters, TranscriptRecordsFrames) {
  LoopbackChannel ch;
  ch.send(Party::A, wire::control("off"));
  ch.record_transcript(true);
  ch.send(Party::B, wire::control("on"));
  auto t = ch.transcript();
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t[0].direction, Direction::BtoA);
  EXPECT_EQ(wire::read_control(t[0].frame), "on");
}

TEST(Bandwidth, EstimatedWallclock) {
  EXPECT_DOUBLE_EQ(estimate_wallclock(1250000, 1.0, BandwidthModel{10e6}), 2.0);
  EXPECT_DOUBLE_EQ(estimate_wallclock(1250000, 1.0, BandwidthModel{100e6}), 1.1);
  EXPECT_DOUBLE_EQ(estimate_wallclock(Meters{}, 0.75, BandwidthModel{10e6}), 0.75);
  EXPECT_THROW(estimate_wallclock(1, 0, BandwidthModel{0}), ParameterError);
}

}  // namespace
}  // namespace pader
