"""
SliceTex 工具模块

- 图像读写（PNG/JPEG 输入，PNG 输出）
- 报告输出（纯文本表、CSV、对比网格图）
"""

__version__ = "1.0.0"
