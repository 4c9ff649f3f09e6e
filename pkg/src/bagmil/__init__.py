#!/usr/bin/env python3
"""
bagmil - 基于LSTM包编码的多示例学习(MIL)库与命令行工具
提供MNIST包任务生成、LeNet实例编码、BiLSTM/注意力包池化、互信息正则、训练与评估协议
"""

__version__ = "0.1.0"

__all__ = ['__version__']
