"""Wire codec and message transports."""
from .channels import connect, memory_pair, memory_pairs, tcp_pairs
from .codec import MsgType, ProtocolMessage, decode, encode, frame_size, wire_size
